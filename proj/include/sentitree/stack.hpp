#pragma once

// Stacking: per-tweet feature vectors built from model distributions and
// semantic flags, multinomial logistic regression, a one-hidden-layer
// network, and recursive feature elimination over feature groups.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentitree/error.hpp"
#include "sentitree/io.hpp"
#include "sentitree/metrics.hpp"
#include "sentitree/rng.hpp"
#include "sentitree/treebank.hpp"

namespace sentitree::stack {

using Distribution = std::array<double, kNumClasses>;

inline constexpr std::size_t kNumFlags = 7;
inline constexpr std::array<std::string_view, kNumFlags> kFlagNames{
    "in_subject", "in_object", "pos_adjective", "neg_adjective", "negation", "quotation", "perfect_progressive"};

struct SemanticFlags {
  std::array<bool, kNumFlags> bits{};

  bool operator[](std::size_t i) const { return bits[i]; }
  bool& operator[](std::size_t i) { return bits[i]; }

  /// Comma-separated flag names; empty or "-" means no flags.
  static SemanticFlags parse(std::string_view csv) {
    SemanticFlags f;
    csv = io::trim(csv);
    if (csv.empty() || csv == "-") return f;
    for (auto part : io::split(csv, ',')) {
      part = io::trim(part);
      if (part.empty()) continue;
      auto it = std::find(kFlagNames.begin(), kFlagNames.end(), part);
      if (it == kFlagNames.end()) fail(Errc::FormatError, "unknown feature flag '" + std::string(part) + "'");
      f.bits[static_cast<std::size_t>(it - kFlagNames.begin())] = true;
    }
    return f;
  }

  std::string to_string() const {
    std::string out;
    for (std::size_t i = 0; i < kNumFlags; ++i) {
      if (!bits[i]) continue;
      if (!out.empty()) out += ',';
      out += kFlagNames[i];
    }
    return out;
  }

  friend bool operator==(const SemanticFlags&, const SemanticFlags&) = default;
};

// ---------------------------------------------------------------------------
// Feature schema

struct FeatureGroup {
  std::string name;
  std::size_t width = 1;
  bool distribution = false;  // columns form a probability vector

  friend bool operator==(const FeatureGroup&, const FeatureGroup&) = default;
};

class FeatureSchema {
 public:
  FeatureSchema() = default;

  explicit FeatureSchema(std::vector<FeatureGroup> groups) : groups_(std::move(groups)) {
    std::set<std::string> seen;
    for (const auto& g : groups_) {
      if (g.name.empty()) fail(Errc::SchemaMismatch, "feature group without a name");
      if (g.width == 0) fail(Errc::SchemaMismatch, "feature group '" + g.name + "' has zero width");
      if (!seen.insert(g.name).second) fail(Errc::SchemaMismatch, "duplicate feature group '" + g.name + "'");
    }
  }

  /// model1..modelN (five columns each), then one column per flag.
  static FeatureSchema pipeline(std::size_t models, bool with_flags = true) {
    std::vector<FeatureGroup> g;
    for (std::size_t m = 0; m < models; ++m) g.push_back({"model" + std::to_string(m + 1), kNumClasses, true});
    if (with_flags)
      for (auto name : kFlagNames) g.push_back({std::string(name), 1, false});
    return FeatureSchema(std::move(g));
  }

  const std::vector<FeatureGroup>& groups() const noexcept { return groups_; }
  std::size_t size() const noexcept { return groups_.size(); }

  std::size_t width() const {
    std::size_t w = 0;
    for (const auto& g : groups_) w += g.width;
    return w;
  }

  std::size_t offset(std::size_t group) const {
    std::size_t w = 0;
    for (std::size_t i = 0; i < group; ++i) w += groups_[i].width;
    return w;
  }

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t i = 0; i < groups_.size(); ++i)
      if (groups_[i].name == name) return i;
    return std::nullopt;
  }

  FeatureSchema subset(std::span<const std::size_t> keep) const {
    std::vector<FeatureGroup> g;
    for (auto i : keep) g.push_back(groups_.at(i));
    return FeatureSchema(std::move(g));
  }

  /// One single-column group per column, named "group" or "group[j]".
  FeatureSchema columns() const {
    std::vector<FeatureGroup> g;
    for (const auto& grp : groups_) {
      if (grp.width == 1) {
        g.push_back({grp.name, 1, false});
        continue;
      }
      for (std::size_t j = 0; j < grp.width; ++j) g.push_back({grp.name + "[" + std::to_string(j) + "]", 1, false});
    }
    return FeatureSchema(std::move(g));
  }

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

 private:
  std::vector<FeatureGroup> groups_;
};

inline nlohmann::json to_json(const FeatureSchema& s) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& g : s.groups())
    arr.push_back({{"name", g.name}, {"width", g.width}, {"distribution", g.distribution}});
  return arr;
}

inline FeatureSchema schema_from_json(const nlohmann::json& j) {
  std::vector<FeatureGroup> g;
  for (const auto& e : j)
    g.push_back({e.at("name").get<std::string>(), e.at("width").get<std::size_t>(), e.at("distribution").get<bool>()});
  return FeatureSchema(std::move(g));
}

struct FeatureVector {
  std::vector<double> values;
  FeatureSchema schema;
};

inline void check_features(std::span<const double> values, const FeatureSchema& schema) {
  if (values.size() != schema.width())
    fail(Errc::SchemaMismatch, "feature width " + std::to_string(values.size()) + " does not match schema width " +
                                   std::to_string(schema.width()));
  std::size_t off = 0;
  for (const auto& g : schema.groups()) {
    double sum = 0.0;
    for (std::size_t j = 0; j < g.width; ++j) {
      const double v = values[off + j];
      if (!std::isfinite(v)) fail(Errc::SchemaMismatch, "non-finite value in group '" + g.name + "'");
      if (g.distribution && v < 0.0) fail(Errc::SchemaMismatch, "negative probability in group '" + g.name + "'");
      sum += v;
    }
    if (g.distribution && std::abs(sum - 1.0) > 1e-6)
      fail(Errc::SchemaMismatch, "group '" + g.name + "' does not sum to 1");
    off += g.width;
  }
}

inline FeatureVector build_features(std::span<const Distribution> model_dists, const SemanticFlags& flags,
                                    bool with_flags = true) {
  if (model_dists.empty()) fail(Errc::SchemaMismatch, "at least one model distribution is required");
  FeatureVector fv;
  fv.schema = FeatureSchema::pipeline(model_dists.size(), with_flags);
  for (const auto& d : model_dists) fv.values.insert(fv.values.end(), d.begin(), d.end());
  if (with_flags)
    for (std::size_t i = 0; i < kNumFlags; ++i) fv.values.push_back(flags[i] ? 1.0 : 0.0);
  check_features(fv.values, fv.schema);
  return fv;
}

struct Dataset {
  FeatureSchema schema;
  std::vector<std::vector<double>> x;
  std::vector<int> y;

  std::size_t size() const noexcept { return x.size(); }

  void add(std::vector<double> values, int label) {
    if (values.size() != schema.width()) fail(Errc::SchemaMismatch, "row width does not match schema");
    x.push_back(std::move(values));
    y.push_back(label);
  }

  /// Keeps the listed groups, in the listed order.
  Dataset project(std::span<const std::size_t> keep) const {
    Dataset out;
    out.schema = schema.subset(keep);
    out.y = y;
    out.x.reserve(x.size());
    for (const auto& row : x) {
      std::vector<double> r;
      r.reserve(out.schema.width());
      for (auto g : keep) {
        const std::size_t off = schema.offset(g);
        for (std::size_t j = 0; j < schema.groups()[g].width; ++j) r.push_back(row[off + j]);
      }
      out.x.push_back(std::move(r));
    }
    return out;
  }

  Dataset as_columns() const {
    Dataset out = *this;
    out.schema = schema.columns();
    return out;
  }
};

// ---------------------------------------------------------------------------
// Multinomial logistic regression

struct LogisticConfig {
  double l2 = 1e-4;
  int max_iterations = 2000;
  double tolerance = 1e-6;  // on the full gradient norm
  double step = 0.0;        // 0 picks 1 / (curvature bound)
};

struct LogisticModel {
  FeatureSchema schema;
  std::vector<int> classes;
  std::vector<double> weights;  // classes x features, row-major
  std::vector<double> bias;
  int iterations = 0;
  double gradient_norm = 0.0;

  std::size_t features() const { return schema.width(); }
  std::size_t num_classes() const { return classes.size(); }
  double weight(std::size_t k, std::size_t f) const { return weights[k * features() + f]; }

  std::optional<std::size_t> class_index(int label) const {
    for (std::size_t k = 0; k < classes.size(); ++k)
      if (classes[k] == label) return k;
    return std::nullopt;
  }
};

namespace detail {

inline void softmax_inplace(std::vector<double>& z) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

inline std::vector<double> logits(const LogisticModel& m, std::span<const double> x) {
  const std::size_t F = m.features();
  std::vector<double> z(m.num_classes());
  for (std::size_t k = 0; k < z.size(); ++k) {
    double s = m.bias[k];
    const double* w = m.weights.data() + k * F;
    for (std::size_t f = 0; f < F; ++f) s += w[f] * x[f];
    z[k] = s;
  }
  return z;
}

/// Objective and gradient of the mean soft-target cross-entropy plus
/// 0.5 * l2 * |W|^2 (bias unpenalized), summed over rows in the given order.
inline double logistic_objective_grad(const LogisticModel& m, const std::vector<const std::vector<double>*>& xs,
                                      const std::vector<const std::vector<double>*>& ts, double l2,
                                      std::vector<double>* gw, std::vector<double>* gb) {
  const std::size_t F = m.features(), K = m.num_classes();
  if (gw) gw->assign(K * F, 0.0);
  if (gb) gb->assign(K, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto& x = *xs[i];
    const auto& t = *ts[i];
    std::vector<double> p = logits(m, x);
    softmax_inplace(p);
    for (std::size_t k = 0; k < K; ++k) {
      if (t[k] > 0.0) total -= t[k] * std::log(std::max(p[k], 1e-300));
      if (!gw) continue;
      const double r = p[k] - t[k];
      double* g = gw->data() + k * F;
      for (std::size_t f = 0; f < F; ++f) g[f] += r * x[f];
      (*gb)[k] += r;
    }
  }
  const double n = static_cast<double>(xs.size());
  total /= n;
  double reg = 0.0;
  for (double w : m.weights) reg += w * w;
  total += 0.5 * l2 * reg;
  if (gw) {
    for (std::size_t j = 0; j < gw->size(); ++j) (*gw)[j] = (*gw)[j] / n + l2 * m.weights[j];
    for (double& g : *gb) g /= n;
  }
  return total;
}

}  // namespace detail

inline std::vector<double> predict_logistic(const LogisticModel& model, std::span<const double> x) {
  if (x.size() != model.features()) fail(Errc::SchemaMismatch, "feature width does not match model");
  std::vector<double> p = detail::logits(model, x);
  detail::softmax_inplace(p);
  return p;
}

inline std::vector<double> predict_logistic(const LogisticModel& model, const FeatureVector& x) {
  if (!(x.schema == model.schema)) fail(Errc::SchemaMismatch, "feature schema does not match model");
  return predict_logistic(model, std::span<const double>(x.values));
}

/// Class label with the highest probability; ties go to the earlier class.
inline int predict_class(const LogisticModel& model, std::span<const double> x) {
  const auto p = predict_logistic(model, x);
  return model.classes[static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin())];
}

/// Fits weights to per-row target distributions over `classes`.
inline LogisticModel train_logistic_soft(const FeatureSchema& schema, const std::vector<std::vector<double>>& x,
                                         const std::vector<std::vector<double>>& targets, std::vector<int> classes,
                                         const LogisticConfig& config = {}, std::vector<double>* trace = nullptr) {
  if (x.empty()) fail(Errc::EmptyInput, "no training rows");
  if (x.size() != targets.size()) fail(Errc::LengthMismatch, "one target per row required");
  if (classes.size() < 2) fail(Errc::SingleClassInput, "at least two classes are required");
  const std::size_t F = schema.width(), K = classes.size();
  double max_sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != F) fail(Errc::SchemaMismatch, "row width does not match schema");
    if (targets[i].size() != K) fail(Errc::SchemaMismatch, "target width does not match class count");
    double sq = 1.0;
    for (double v : x[i]) {
      if (!std::isfinite(v)) fail(Errc::NumericFailure, "non-finite feature value");
      sq += v * v;
    }
    max_sq = std::max(max_sq, sq);
  }

  // Sum in a canonical row order so the fit does not depend on input order.
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return targets[a] < targets[b];
  });
  std::vector<const std::vector<double>*> xs, ts;
  for (auto i : order) {
    xs.push_back(&x[i]);
    ts.push_back(&targets[i]);
  }

  LogisticModel m;
  m.schema = schema;
  m.classes = std::move(classes);
  m.weights.assign(K * F, 0.0);
  m.bias.assign(K, 0.0);
  const double step = config.step > 0.0 ? config.step : 1.0 / (0.5 * max_sq + config.l2);

  std::vector<double> gw, gb;
  for (int it = 0;; ++it) {
    const double obj = detail::logistic_objective_grad(m, xs, ts, config.l2, &gw, &gb);
    if (trace) trace->push_back(obj);
    double norm = 0.0;
    for (double g : gw) norm += g * g;
    for (double g : gb) norm += g * g;
    m.gradient_norm = std::sqrt(norm);
    if (!std::isfinite(obj) || !std::isfinite(m.gradient_norm)) fail(Errc::NumericFailure, "logistic fit diverged");
    if (it >= config.max_iterations || m.gradient_norm <= config.tolerance) break;
    for (std::size_t j = 0; j < gw.size(); ++j) m.weights[j] -= step * gw[j];
    for (std::size_t k = 0; k < K; ++k) m.bias[k] -= step * gb[k];
    m.iterations = it + 1;
  }
  return m;
}

/// Hard-label fit; classes are the sorted distinct labels.
inline LogisticModel train_logistic(const Dataset& data, const LogisticConfig& config = {},
                                    std::vector<double>* trace = nullptr) {
  if (data.size() == 0) fail(Errc::EmptyInput, "no training rows");
  if (data.y.size() != data.x.size()) fail(Errc::LengthMismatch, "one label per row required");
  std::vector<int> classes(data.y.begin(), data.y.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  if (classes.size() < 2) fail(Errc::SingleClassInput, "training labels contain a single class");
  std::vector<std::vector<double>> targets;
  targets.reserve(data.size());
  for (int label : data.y) {
    std::vector<double> t(classes.size(), 0.0);
    t[static_cast<std::size_t>(std::lower_bound(classes.begin(), classes.end(), label) - classes.begin())] = 1.0;
    targets.push_back(std::move(t));
  }
  return train_logistic_soft(data.schema, data.x, targets, std::move(classes), config, trace);
}

/// Regularized objective of `model` on hard-labeled data.
inline double logistic_objective(const LogisticModel& model, const Dataset& data, double l2) {
  std::vector<std::vector<double>> targets;
  for (int label : data.y) {
    std::vector<double> t(model.num_classes(), 0.0);
    auto k = model.class_index(label);
    if (!k) fail(Errc::MissingClass, "label not among the model's classes");
    t[*k] = 1.0;
    targets.push_back(std::move(t));
  }
  std::vector<const std::vector<double>*> xs, ts;
  for (std::size_t i = 0; i < data.size(); ++i) {
    xs.push_back(&data.x[i]);
    ts.push_back(&targets[i]);
  }
  return detail::logistic_objective_grad(model, xs, ts, l2, nullptr, nullptr);
}

// ---------------------------------------------------------------------------
// Feedforward network: tanh hidden layer, softmax over five classes

struct MlpConfig {
  std::size_t hidden = 32;
  int epochs = 200;
  std::size_t batch_size = 16;
  double learning_rate = 0.1;
  double l2 = 0.0;
  std::uint64_t seed = 0;
};

struct MlpModel {
  FeatureSchema schema;
  std::size_t hidden = 0;
  std::vector<double> w1;  // hidden x features
  std::vector<double> b1;
  std::vector<double> w2;  // 5 x hidden
  std::vector<double> b2;

  std::size_t features() const { return schema.width(); }

  static MlpModel zeros(const FeatureSchema& schema, std::size_t hidden) {
    MlpModel m;
    m.schema = schema;
    m.hidden = hidden;
    m.w1.assign(hidden * schema.width(), 0.0);
    m.b1.assign(hidden, 0.0);
    m.w2.assign(kNumClasses * hidden, 0.0);
    m.b2.assign(kNumClasses, 0.0);
    return m;
  }

  template <class F>
  void for_each_block(F&& f) {
    f(w1);
    f(b1);
    f(w2);
    f(b2);
  }

  template <class F>
  void for_each_block(F&& f) const {
    f(w1);
    f(b1);
    f(w2);
    f(b2);
  }

  friend bool operator==(const MlpModel&, const MlpModel&) = default;
};

namespace detail {

struct MlpActivations {
  std::vector<double> a;  // tanh hidden
  Distribution p{};
};

inline MlpActivations mlp_forward(const MlpModel& m, std::span<const double> x) {
  const std::size_t F = m.features(), H = m.hidden;
  MlpActivations act;
  act.a.resize(H);
  for (std::size_t j = 0; j < H; ++j) {
    double s = m.b1[j];
    const double* w = m.w1.data() + j * F;
    for (std::size_t f = 0; f < F; ++f) s += w[f] * x[f];
    act.a[j] = std::tanh(s);
  }
  std::vector<double> z(kNumClasses);
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    double s = m.b2[c];
    const double* w = m.w2.data() + c * H;
    for (std::size_t j = 0; j < H; ++j) s += w[j] * act.a[j];
    z[c] = s;
  }
  softmax_inplace(z);
  std::copy(z.begin(), z.end(), act.p.begin());
  return act;
}

}  // namespace detail

inline Distribution predict_mlp(const MlpModel& model, std::span<const double> x) {
  if (x.size() != model.features()) fail(Errc::SchemaMismatch, "feature width does not match model");
  return detail::mlp_forward(model, x).p;
}

/// Mean cross-entropy over `rows` plus 0.5 * l2 * |weights|^2; fills `grad`
/// with the exact gradient when given.
inline double mlp_loss(const MlpModel& m, const Dataset& data, std::span<const std::size_t> rows, double l2,
                       MlpModel* grad) {
  const std::size_t F = m.features(), H = m.hidden;
  if (grad) *grad = MlpModel::zeros(m.schema, H);
  double total = 0.0;
  std::vector<double> da(H);
  for (auto i : rows) {
    const auto& x = data.x[i];
    const int y = data.y[i];
    const auto act = detail::mlp_forward(m, x);
    total -= std::log(std::max(act.p[static_cast<std::size_t>(y)], 1e-300));
    if (!grad) continue;
    std::fill(da.begin(), da.end(), 0.0);
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      const double dz = act.p[c] - (static_cast<int>(c) == y ? 1.0 : 0.0);
      grad->b2[c] += dz;
      double* g = grad->w2.data() + c * H;
      const double* w = m.w2.data() + c * H;
      for (std::size_t j = 0; j < H; ++j) {
        g[j] += dz * act.a[j];
        da[j] += dz * w[j];
      }
    }
    for (std::size_t j = 0; j < H; ++j) {
      const double ds = da[j] * (1.0 - act.a[j] * act.a[j]);
      grad->b1[j] += ds;
      double* g = grad->w1.data() + j * F;
      for (std::size_t f = 0; f < F; ++f) g[f] += ds * x[f];
    }
  }
  const double n = static_cast<double>(rows.size());
  total /= n;
  double reg = 0.0;
  for (double w : m.w1) reg += w * w;
  for (double w : m.w2) reg += w * w;
  total += 0.5 * l2 * reg;
  if (grad) {
    grad->for_each_block([&](std::vector<double>& b) {
      for (double& v : b) v /= n;
    });
    for (std::size_t j = 0; j < m.w1.size(); ++j) grad->w1[j] += l2 * m.w1[j];
    for (std::size_t j = 0; j < m.w2.size(); ++j) grad->w2[j] += l2 * m.w2[j];
  }
  return total;
}

inline MlpModel train_mlp(const Dataset& data, const MlpConfig& config = {}) {
  if (data.size() == 0) fail(Errc::EmptyInput, "no training rows");
  if (config.hidden == 0) fail(Errc::ShapeMismatch, "hidden layer must be non-empty");
  for (int y : data.y)
    if (y < 0 || y >= kNumClasses) fail(Errc::BadLabel, "network labels must be in 0..4");
  const std::size_t F = data.schema.width(), H = config.hidden;
  for (const auto& row : data.x)
    if (row.size() != F) fail(Errc::SchemaMismatch, "row width does not match schema");

  Rng rng(config.seed);
  MlpModel m = MlpModel::zeros(data.schema, H);
  const double r1 = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(F, 1)));
  const double r2 = 1.0 / std::sqrt(static_cast<double>(H));
  for (double& w : m.w1) w = rng.uniform(-r1, r1);
  for (double& w : m.w2) w = rng.uniform(-r2, r2);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);
  MlpModel grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      mlp_loss(m, data, std::span<const std::size_t>(order).subspan(start, end - start), config.l2, &grad);
      auto apply = [&](std::vector<double>& p, const std::vector<double>& g) {
        for (std::size_t j = 0; j < p.size(); ++j) p[j] -= config.learning_rate * g[j];
      };
      apply(m.w1, grad.w1);
      apply(m.b1, grad.b1);
      apply(m.w2, grad.w2);
      apply(m.b2, grad.b2);
    }
  }
  bool finite = true;
  m.for_each_block([&](const std::vector<double>& b) {
    for (double v : b) finite = finite && std::isfinite(v);
  });
  if (!finite) fail(Errc::NumericFailure, "network training diverged");
  return m;
}

// ---------------------------------------------------------------------------
// Recursive feature elimination

enum class RfeMode { Group, Column };

struct RfeConfig {
  std::optional<std::size_t> target;  // nullopt: choose by cross-validation
  std::size_t folds = 5;
  RfeMode mode = RfeMode::Group;
  LogisticConfig logistic{};
  std::uint64_t seed = 0;
};

struct RfeStep {
  std::vector<std::string> groups;  // groups in play at this step
  std::optional<double> cv_score;   // pooled out-of-fold macro recall
  std::string dropped;              // empty on the final step
};

struct RfeResult {
  std::vector<std::string> selected;
  std::vector<std::string> pruned;  // constant groups removed up front
  std::vector<RfeStep> steps;
};

/// L2 norm of each group's weight columns across all classes.
inline std::vector<double> group_weight_norms(const LogisticModel& model) {
  std::vector<double> out;
  const auto& schema = model.schema;
  for (std::size_t g = 0; g < schema.size(); ++g) {
    const std::size_t off = schema.offset(g);
    double s = 0.0;
    for (std::size_t k = 0; k < model.num_classes(); ++k)
      for (std::size_t j = 0; j < schema.groups()[g].width; ++j) {
        const double w = model.weight(k, off + j);
        s += w * w;
      }
    out.push_back(std::sqrt(s));
  }
  return out;
}

/// Pooled out-of-fold macro recall of a logistic model on `data`.
inline double cross_validated_recall(const Dataset& data, std::size_t folds, const LogisticConfig& config,
                                     std::uint64_t seed) {
  if (folds < 2) fail(Errc::UsageError, "cross-validation needs at least two folds");
  if (data.size() < folds) fail(Errc::EmptyInput, "fewer rows than folds");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::size_t> fold_of(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) fold_of[order[i]] = i % folds;

  std::vector<int> classes(data.y.begin(), data.y.end());
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
  auto index_of = [&](int label) {
    return static_cast<int>(std::lower_bound(classes.begin(), classes.end(), label) - classes.begin());
  };
  metrics::ConfusionTable conf(classes.size());
  for (std::size_t f = 0; f < folds; ++f) {
    Dataset train{data.schema, {}, {}};
    for (std::size_t i = 0; i < data.size(); ++i)
      if (fold_of[i] != f) train.add(data.x[i], data.y[i]);
    const LogisticModel m = train_logistic(train, config);
    for (std::size_t i = 0; i < data.size(); ++i)
      if (fold_of[i] == f) conf.add(index_of(data.y[i]), index_of(predict_class(m, data.x[i])));
  }
  return metrics::macro_recall(conf);
}

inline RfeResult rfe_select(const Dataset& input, const RfeConfig& config = {}) {
  const Dataset data = config.mode == RfeMode::Column ? input.as_columns() : input;
  const auto& groups = data.schema.groups();
  if (groups.size() < 2) fail(Errc::TooFewGroups, "feature elimination needs at least two groups");
  if (config.target && (*config.target == 0 || *config.target > groups.size()))
    fail(Errc::UsageError, "target group count must be between 1 and " + std::to_string(groups.size()));

  RfeResult result;
  std::vector<std::size_t> live;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t off = data.schema.offset(g);
    bool constant = true;
    for (std::size_t j = 0; j < groups[g].width && constant; ++j)
      for (std::size_t i = 1; i < data.size() && constant; ++i) constant = data.x[i][off + j] == data.x[0][off + j];
    if (constant)
      result.pruned.push_back(groups[g].name);
    else
      live.push_back(g);
  }
  if (live.size() < 2) fail(Errc::TooFewGroups, "fewer than two non-constant feature groups");

  const std::size_t stop = config.target ? std::min(*config.target, live.size()) : 1;
  std::vector<std::vector<std::size_t>> sets;
  for (;;) {
    RfeStep step;
    for (auto g : live) step.groups.push_back(groups[g].name);
    const Dataset view = data.project(live);
    if (!config.target) step.cv_score = cross_validated_recall(view, config.folds, config.logistic, config.seed);
    sets.push_back(live);
    if (live.size() <= stop) {
      result.steps.push_back(std::move(step));
      break;
    }
    const auto norms = group_weight_norms(train_logistic(view, config.logistic));
    const std::size_t weakest = static_cast<std::size_t>(std::min_element(norms.begin(), norms.end()) - norms.begin());
    step.dropped = groups[live[weakest]].name;
    live.erase(live.begin() + static_cast<std::ptrdiff_t>(weakest));
    result.steps.push_back(std::move(step));
  }

  std::size_t chosen = sets.size() - 1;
  if (!config.target) {
    // Best score; ties keep the smaller set.
    double best = -1.0;
    for (std::size_t s = 0; s < result.steps.size(); ++s)
      if (*result.steps[s].cv_score >= best) {
        best = *result.steps[s].cv_score;
        chosen = s;
      }
  }
  for (auto g : sets[chosen]) result.selected.push_back(groups[g].name);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

inline constexpr int kStackModelVersion = 1;

inline nlohmann::json to_json(const LogisticModel& m) {
  return {{"format", "sentitree-logistic"}, {"version", kStackModelVersion}, {"schema", to_json(m.schema)},
          {"classes", m.classes},          {"weights", m.weights},             {"bias", m.bias}};
}

inline LogisticModel logistic_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "sentitree-logistic") fail(Errc::FormatError, "not a logistic model");
    if (j.at("version").get<int>() != kStackModelVersion) fail(Errc::FormatError, "unsupported logistic model version");
    LogisticModel m;
    m.schema = schema_from_json(j.at("schema"));
    m.classes = j.at("classes").get<std::vector<int>>();
    m.weights = j.at("weights").get<std::vector<double>>();
    m.bias = j.at("bias").get<std::vector<double>>();
    if (m.classes.size() < 2 || m.bias.size() != m.classes.size() ||
        m.weights.size() != m.classes.size() * m.schema.width())
      fail(Errc::ShapeMismatch, "logistic model shapes are inconsistent");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::FormatError, std::string("malformed logistic model: ") + e.what());
  }
}

inline nlohmann::json to_json(const MlpModel& m) {
  return {{"format", "sentitree-mlp"}, {"version", kStackModelVersion}, {"schema", to_json(m.schema)},
          {"hidden", m.hidden},       {"w1", m.w1},                     {"b1", m.b1},
          {"w2", m.w2},               {"b2", m.b2}};
}

inline MlpModel mlp_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "sentitree-mlp") fail(Errc::FormatError, "not a network model");
    if (j.at("version").get<int>() != kStackModelVersion) fail(Errc::FormatError, "unsupported network model version");
    MlpModel m = MlpModel::zeros(schema_from_json(j.at("schema")), j.at("hidden").get<std::size_t>());
    MlpModel shape = m;
    m.w1 = j.at("w1").get<std::vector<double>>();
    m.b1 = j.at("b1").get<std::vector<double>>();
    m.w2 = j.at("w2").get<std::vector<double>>();
    m.b2 = j.at("b2").get<std::vector<double>>();
    if (m.w1.size() != shape.w1.size() || m.b1.size() != shape.b1.size() || m.w2.size() != shape.w2.size() ||
        m.b2.size() != shape.b2.size())
      fail(Errc::ShapeMismatch, "network model shapes are inconsistent");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::FormatError, std::string("malformed network model: ") + e.what());
  }
}

inline nlohmann::json load_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::FormatError, "cannot parse '" + path.string() + "': " + e.what());
  }
}

inline void save_json(const std::filesystem::path& path, const nlohmann::json& j) {
  io::atomic_write(path, j.dump() + "\n");
}

}  // namespace sentitree::stack
