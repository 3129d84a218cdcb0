#pragma once

// Task workflows on top of the stacking pipeline:
//   A  three-class tweet labels after resampling the training set so a
//      logistic model predicts similar class distributions on train and test
//   B  entity-aware positive/negative labels with a per-entity prior
//   C  five-class labels after entity-level reweighting
//   D  per-entity positive rate from a Beta-Binomial posterior
//   E  per-entity five-class distribution from minimum expected distance labels

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentitree/error.hpp"
#include "sentitree/io.hpp"
#include "sentitree/rng.hpp"
#include "sentitree/stack.hpp"
#include "sentitree/treebank.hpp"

namespace sentitree::tasks {

using Distribution = std::array<double, kNumClasses>;

// ---------------------------------------------------------------------------
// Records and files

struct DatasetRecord {
  std::string id;
  std::string entity;       // empty when the tweet has no entity
  std::optional<int> gold;  // class 0..4
  std::string text;
  stack::SemanticFlags flags;
  std::vector<ParseTree> parses;
};

/// `id <TAB> entity <TAB> label <TAB> text [<TAB> flags]`, label in -2..2 or
/// empty/`_` when unknown. A first line starting with `id<TAB>` is a header.
inline std::vector<DatasetRecord> read_dataset(std::istream& in, const std::string& source = "<stream>") {
  std::vector<DatasetRecord> out;
  std::set<std::string, std::less<>> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view l = io::strip_cr(line);
    if (io::trim(l).empty()) continue;
    if (line_no == 1 && l.substr(0, 3) == "id\t") continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto f = io::split(l, '\t');
    if (f.size() < 4 || f.size() > 5) fail(Errc::FormatError, where + "expected 4 or 5 tab-separated fields");
    DatasetRecord r;
    r.id = std::string(io::trim(f[0]));
    if (r.id.empty()) fail(Errc::FormatError, where + "empty id");
    if (!ids.insert(r.id).second) fail(Errc::FormatError, where + "duplicate id '" + r.id + "'");
    r.entity = std::string(io::trim(f[1]));
    const auto label = io::trim(f[2]);
    if (!label.empty() && label != "_") {
      long long v = 0;
      try {
        v = io::parse_int(label, "label");
      } catch (const Error& e) {
        fail(Errc::BadLabel, where + e.what());
      }
      if (v < -2 || v > 2) fail(Errc::BadLabel, where + "label outside -2..2");
      r.gold = static_cast<int>(v) + 2;
    }
    r.text = std::string(f[3]);
    if (f.size() == 5) {
      try {
        r.flags = stack::SemanticFlags::parse(f[4]);
      } catch (const Error& e) {
        fail(e.code(), where + e.what());
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<DatasetRecord> load_dataset(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  return read_dataset(in, path.string());
}

inline std::string write_dataset(std::span<const DatasetRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += r.id + '\t' + r.entity + '\t' + (r.gold ? std::to_string(*r.gold - 2) : std::string("_")) + '\t' + r.text +
           '\t' + r.flags.to_string() + '\n';
  }
  return out;
}

using DistTable = std::map<std::string, Distribution, std::less<>>;

/// `id <TAB> p0 .. p4`, each row a probability vector.
inline DistTable read_dists(std::istream& in, const std::string& source = "<stream>") {
  DistTable out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view l = io::strip_cr(line);
    if (io::trim(l).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto f = io::split(l, '\t');
    if (f.size() != 1 + kNumClasses) fail(Errc::FormatError, where + "expected id and 5 probabilities");
    Distribution d{};
    double sum = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
      try {
        d[c] = io::parse_double(f[1 + c], "probability");
      } catch (const Error& e) {
        fail(Errc::FormatError, where + e.what());
      }
      if (!(d[c] >= 0.0)) fail(Errc::FormatError, where + "negative probability");
      sum += d[c];
    }
    if (std::abs(sum - 1.0) > 1e-6) fail(Errc::FormatError, where + "probabilities do not sum to 1");
    if (!out.emplace(std::string(io::trim(f[0])), d).second) fail(Errc::FormatError, where + "duplicate id");
  }
  return out;
}

inline DistTable load_dists(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  return read_dists(in, path.string());
}

inline std::string write_dists(const DistTable& table) {
  std::string out;
  for (const auto& [id, d] : table) {
    out += id;
    for (double v : d) out += '\t' + io::format_double(v);
    out += '\n';
  }
  return out;
}

struct Prediction {
  std::string id;
  std::string entity;
  int label = 0;  // in the task's label space, e.g. -1..1 for task A

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

inline std::string write_predictions(std::span<const Prediction> preds) {
  std::string out;
  for (const auto& p : preds) out += p.id + '\t' + p.entity + '\t' + std::to_string(p.label) + '\n';
  return out;
}

inline std::vector<Prediction> read_predictions(std::istream& in, const std::string& source = "<stream>") {
  std::vector<Prediction> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view l = io::strip_cr(line);
    if (io::trim(l).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto f = io::split(l, '\t');
    if (f.size() != 3) fail(Errc::FormatError, where + "expected id, entity and label");
    Prediction p{std::string(io::trim(f[0])), std::string(io::trim(f[1])), 0};
    try {
      p.label = static_cast<int>(io::parse_int(f[2], "label"));
    } catch (const Error& e) {
      fail(Errc::BadLabel, where + e.what());
    }
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  return read_predictions(in, path.string());
}

/// entity -> five probabilities, or a single positive rate.
using QuantTable = std::map<std::string, std::vector<double>, std::less<>>;

inline std::string write_quantification(const QuantTable& table) {
  std::string out;
  for (const auto& [entity, v] : table) {
    out += entity;
    for (double x : v) out += '\t' + io::format_double(x);
    out += '\n';
  }
  return out;
}

inline QuantTable read_quantification(std::istream& in, const std::string& source = "<stream>") {
  QuantTable out;
  std::string line;
  std::size_t line_no = 0;
  std::optional<std::size_t> width;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view l = io::strip_cr(line);
    if (io::trim(l).empty()) continue;
    const std::string where = source + ":" + std::to_string(line_no) + ": ";
    const auto f = io::split(l, '\t');
    if (f.size() != 2 && f.size() != 1 + kNumClasses) fail(Errc::FormatError, where + "expected 1 or 5 values");
    if (width && *width != f.size()) fail(Errc::FormatError, where + "inconsistent row width");
    width = f.size();
    std::vector<double> v;
    for (std::size_t i = 1; i < f.size(); ++i) {
      try {
        v.push_back(io::parse_double(f[i], "probability"));
      } catch (const Error& e) {
        fail(Errc::FormatError, where + e.what());
      }
    }
    if (!out.emplace(std::string(io::trim(f[0])), std::move(v)).second)
      fail(Errc::FormatError, where + "duplicate entity");
  }
  return out;
}

inline QuantTable load_quantification(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  return read_quantification(in, path.string());
}

// ---------------------------------------------------------------------------
// Label spaces

enum class Task { A, B, C, D, E };

inline Task parse_task(std::string_view s) {
  if (s == "a" || s == "A") return Task::A;
  if (s == "b" || s == "B") return Task::B;
  if (s == "c" || s == "C") return Task::C;
  if (s == "d" || s == "D") return Task::D;
  if (s == "e" || s == "E") return Task::E;
  fail(Errc::UsageError, "unknown task '" + std::string(s) + "'");
}

/// Five-class index to the task's class index; nullopt when the task ignores
/// the class (neutral for the binary tasks).
inline std::optional<int> task_class(Task task, int five) {
  switch (task) {
    case Task::A:
      return five < 2 ? 0 : five == 2 ? 1 : 2;
    case Task::B:
    case Task::D:
      if (five == 2) return std::nullopt;
      return five < 2 ? 0 : 1;
    default:
      return five;
  }
}

inline std::size_t task_classes(Task task) {
  switch (task) {
    case Task::A:
      return 3;
    case Task::B:
    case Task::D:
      return 2;
    default:
      return kNumClasses;
  }
}

/// Task class index to the label written in prediction files.
inline int class_to_label(Task task, int cls) {
  switch (task) {
    case Task::A:
      return cls - 1;
    case Task::B:
    case Task::D:
      return cls == 0 ? -1 : 1;
    default:
      return cls - 2;
  }
}

inline int label_to_class(Task task, int label) {
  switch (task) {
    case Task::A:
      if (label < -1 || label > 1) fail(Errc::BadLabel, "task A labels are -1, 0, 1");
      return label + 1;
    case Task::B:
    case Task::D:
      if (label != -1 && label != 1) fail(Errc::BadLabel, "binary labels are -1 and 1");
      return label == -1 ? 0 : 1;
    default:
      if (label < -2 || label > 2) fail(Errc::BadLabel, "five-class labels are -2..2");
      return label + 2;
  }
}

// ---------------------------------------------------------------------------
// Resampling

/// Per-class counts summing to `size` that follow `target` by largest
/// remainder; remainder ties go to the lower class.
inline std::vector<std::size_t> target_counts(std::span<const double> target, std::size_t size) {
  double total = 0.0;
  for (double t : target) {
    if (!(t >= 0.0) || !std::isfinite(t)) fail(Errc::NumericFailure, "target distribution must be non-negative");
    total += t;
  }
  if (total <= 0.0) fail(Errc::NumericFailure, "target distribution has no mass");
  std::vector<std::size_t> counts(target.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const double exact = target[k] / total * static_cast<double>(size);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[k];
    rem.emplace_back(exact - std::floor(exact), k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto& a, auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < size && i < rem.size(); ++i, ++assigned) ++counts[rem[i].second];
  return counts;
}

/// Row indices drawn with replacement so class `classes[k]` makes up
/// target[k] of the sample.
inline std::vector<std::size_t> resample_to_target(std::span<const int> labels, std::span<const int> classes,
                                                   std::span<const double> target, std::size_t size,
                                                   std::uint64_t seed) {
  if (classes.size() != target.size()) fail(Errc::LengthMismatch, "one target value per class required");
  std::vector<std::vector<std::size_t>> members(classes.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto it = std::find(classes.begin(), classes.end(), labels[i]);
    if (it != classes.end()) members[static_cast<std::size_t>(it - classes.begin())].push_back(i);
  }
  for (std::size_t k = 0; k < classes.size(); ++k)
    if (target[k] > 0.0 && members[k].empty())
      fail(Errc::MissingClass, "target puts mass on class " + std::to_string(classes[k]) + " which has no rows");
  const auto counts = target_counts(target, size);
  Rng rng(seed);
  std::vector<std::size_t> out;
  out.reserve(size);
  for (std::size_t k = 0; k < classes.size(); ++k)
    for (std::size_t n = 0; n < counts[k]; ++n) out.push_back(members[k][rng.below(members[k].size())]);
  rng.shuffle(out);
  return out;
}

/// Resample over classes 0..target.size()-1, keeping the original size.
inline stack::Dataset resample_to_target(const stack::Dataset& data, std::span<const double> target,
                                         std::uint64_t seed, std::optional<std::size_t> size = std::nullopt) {
  std::vector<int> classes(target.size());
  for (std::size_t k = 0; k < classes.size(); ++k) classes[k] = static_cast<int>(k);
  const auto idx = resample_to_target(data.y, classes, target, size.value_or(data.size()), seed);
  stack::Dataset out{data.schema, {}, {}};
  for (auto i : idx) out.add(data.x[i], data.y[i]);
  return out;
}

struct MatchConfig {
  int max_iterations = 20;
  double tolerance = 0.02;  // L1 between mean predicted test and train distributions
  stack::LogisticConfig logistic{};
  std::uint64_t seed = 0;
};

struct MatchResult {
  stack::Dataset sample;
  std::vector<double> trace;  // distance measured at each iteration
  bool converged = false;
};

namespace detail {

inline std::vector<double> mean_prediction(const stack::LogisticModel& m, const std::vector<std::vector<double>>& rows) {
  std::vector<double> mean(m.num_classes(), 0.0);
  for (const auto& x : rows) {
    const auto p = stack::predict_logistic(m, x);
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += p[k];
  }
  for (double& v : mean) v /= static_cast<double>(rows.size());
  return mean;
}

}  // namespace detail

/// Repeatedly fits a logistic model on the current sample, predicts the
/// test rows, and resamples the training rows toward the predicted test
/// class distribution until the two mean predictions agree.
inline MatchResult iterative_distribution_match(const stack::Dataset& train,
                                                const std::vector<std::vector<double>>& test,
                                                const MatchConfig& config = {}) {
  if (train.size() == 0) fail(Errc::EmptyInput, "no training rows");
  if (test.empty()) fail(Errc::EmptyInput, "no test rows");
  MatchResult result;
  result.sample = train;
  for (int it = 0; it < config.max_iterations; ++it) {
    const auto model = stack::train_logistic(result.sample, config.logistic);
    const auto q_test = detail::mean_prediction(model, test);
    const auto q_train = detail::mean_prediction(model, result.sample.x);
    double dist = 0.0;
    for (std::size_t k = 0; k < q_test.size(); ++k) dist += std::abs(q_test[k] - q_train[k]);
    result.trace.push_back(dist);
    if (dist < config.tolerance) {
      result.converged = true;
      break;
    }
    const auto idx = resample_to_target(train.y, model.classes, q_test, train.size(),
                                        derive_seed(config.seed, static_cast<std::uint64_t>(it)));
    stack::Dataset next{train.schema, {}, {}};
    for (auto i : idx) next.add(train.x[i], train.y[i]);
    result.sample = std::move(next);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Entity priors

/// Beta(alpha0 + positives, beta0 + negatives). Counts are kept apart from
/// the prior so repeated updates compose exactly.
struct EntityPrior {
  std::string entity;
  double alpha0 = 1.0;
  double beta0 = 1.0;
  std::uint64_t positives = 0;
  std::uint64_t negatives = 0;

  double alpha() const { return alpha0 + static_cast<double>(positives); }
  double beta() const { return beta0 + static_cast<double>(negatives); }
  double mean() const { return alpha() / (alpha() + beta()); }

  friend bool operator==(const EntityPrior&, const EntityPrior&) = default;
};

using PriorTable = std::map<std::string, EntityPrior, std::less<>>;

/// Beta(kappa p, kappa (1 - p)).
inline EntityPrior prior_from_rate(std::string entity, double p, double kappa = 10.0) {
  if (!(p > 0.0 && p < 1.0)) fail(Errc::NumericFailure, "prior rate must lie strictly between 0 and 1");
  if (!(kappa > 0.0)) fail(Errc::NumericFailure, "prior concentration must be positive");
  return {std::move(entity), kappa * p, kappa * (1.0 - p), 0, 0};
}

inline EntityPrior beta_posterior(const EntityPrior& prior, long long positives, long long total) {
  if (positives < 0 || total < 0 || positives > total)
    fail(Errc::CountOutOfRange, "need 0 <= positives <= total, got " + std::to_string(positives) + " of " +
                                   std::to_string(total));
  EntityPrior post = prior;
  post.positives += static_cast<std::uint64_t>(positives);
  post.negatives += static_cast<std::uint64_t>(total - positives);
  return post;
}

enum class ThresholdScope { Global, Entity };

struct BinaryRow {
  std::string entity;
  Distribution dist{};
};

struct BinaryDecision {
  std::vector<int> labels;       // 1 positive, 0 negative
  std::vector<double> positive;  // model probability of the positive class
  std::map<std::string, double, std::less<>> thresholds;  // per entity, equal under the global scope
};

inline stack::FeatureSchema binary_schema() {
  return stack::FeatureSchema({{"tweet", kNumClasses, true}, {"entity_prior", 1, false}});
}

inline std::vector<double> binary_features(const Distribution& dist, double prior_mean) {
  std::vector<double> x(dist.begin(), dist.end());
  x.push_back(prior_mean);
  return x;
}

/// Positive probability from a logistic model over [dist, prior mean] per
/// tweet, thresholded at the mean positive probability. Probabilities equal
/// to the threshold count as positive.
inline BinaryDecision entity_binary_classify(std::span<const BinaryRow> rows, const PriorTable& priors,
                                             const stack::LogisticModel& model,
                                             ThresholdScope scope = ThresholdScope::Global) {
  if (rows.empty()) fail(Errc::EmptyInput, "no tweets to classify");
  const auto pos = model.class_index(1);
  if (!pos || model.num_classes() != 2) fail(Errc::SchemaMismatch, "model must be binary over classes 0 and 1");
  BinaryDecision out;
  std::map<std::string, std::pair<double, std::size_t>, std::less<>> sums;
  double total = 0.0;
  for (const auto& r : rows) {
    auto it = priors.find(r.entity);
    if (it == priors.end()) fail(Errc::MissingPrior, "no prior for entity '" + r.entity + "'");
    const double p = stack::predict_logistic(model, binary_features(r.dist, it->second.mean()))[*pos];
    out.positive.push_back(p);
    total += p;
    auto& s = sums[r.entity];
    s.first += p;
    ++s.second;
  }
  const double global = total / static_cast<double>(rows.size());
  for (const auto& [e, s] : sums)
    out.thresholds[e] = scope == ThresholdScope::Global ? global : s.first / static_cast<double>(s.second);
  constexpr double kTie = 1e-12;
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.labels.push_back(out.positive[i] >= out.thresholds.at(rows[i].entity) - kTie ? 1 : 0);
  return out;
}

// ---------------------------------------------------------------------------
// Entity reweighting and expected-distance labels

namespace detail {

/// Per-class mass over T. A class with no mass anywhere in T contributes
/// nothing to the ratios p(t0, c) / col[c]; T without any mass is an error.
inline Distribution column_sums(std::span<const Distribution> dists) {
  if (dists.empty()) fail(Errc::EmptyInput, "tweet set is empty");
  Distribution col{};
  for (const auto& d : dists)
    for (int c = 0; c < kNumClasses; ++c) {
      if (!(d[c] >= 0.0) || !std::isfinite(d[c])) fail(Errc::NumericFailure, "tweet distribution is not valid");
      col[c] += d[c];
    }
  bool any = false;
  for (int c = 0; c < kNumClasses; ++c) any = any || col[c] > 0.0;
  if (!any) fail(Errc::ZeroColumn, "no class has probability mass in T");
  return col;
}

inline double ratio(double p, double col) { return col > 0.0 ? p / col : 0.0; }

}  // namespace detail

/// p_new(t0, c0) = sum_c p(t0, c) p_lr(c0) / sum_t p(t, c), before renormalization.
inline Distribution entity_reweight_unnormalized(std::span<const Distribution> dists, std::size_t t0,
                                                 const Distribution& p_lr) {
  const Distribution col = detail::column_sums(dists);
  if (t0 >= dists.size()) fail(Errc::LengthMismatch, "tweet index outside T");
  double factor = 0.0;
  for (int c = 0; c < kNumClasses; ++c) factor += detail::ratio(dists[t0][c], col[c]);
  Distribution out{};
  for (int c0 = 0; c0 < kNumClasses; ++c0) out[c0] = factor * p_lr[c0];
  return out;
}

/// The reweighted distribution normalized over c0. The reweighting factor
/// does not depend on c0, so it cancels and the result is p_lr normalized.
inline Distribution entity_reweight(std::span<const Distribution> dists, std::size_t t0, const Distribution& p_lr) {
  const Distribution raw = entity_reweight_unnormalized(dists, t0, p_lr);
  double raw_sum = 0.0, sum = 0.0;
  for (int c = 0; c < kNumClasses; ++c) {
    raw_sum += raw[c];
    sum += p_lr[c];
  }
  if (!(raw_sum > 0.0) || !std::isfinite(raw_sum)) fail(Errc::NumericFailure, "reweighted distribution has no mass");
  Distribution out{};
  for (int c = 0; c < kNumClasses; ++c) out[c] = p_lr[c] / sum;
  return out;
}

struct DistanceLabel {
  int label = 2;
  std::array<double, kNumClasses> losses{};
};

/// loss(c0) = sum_c |c - c0| p(t0, c) / sum_t p(t, c); the argmin with ties
/// resolved toward the neutral class, then the lower class.
inline DistanceLabel min_expected_distance_label(std::span<const Distribution> dists, std::size_t t0) {
  const Distribution col = detail::column_sums(dists);
  if (t0 >= dists.size()) fail(Errc::LengthMismatch, "tweet index outside T");
  DistanceLabel out;
  for (int c0 = 0; c0 < kNumClasses; ++c0) {
    double s = 0.0;
    for (int c = 0; c < kNumClasses; ++c) s += std::abs(c - c0) * detail::ratio(dists[t0][c], col[c]);
    out.losses[c0] = s;
  }
  const double best = *std::min_element(out.losses.begin(), out.losses.end());
  constexpr double kTie = 1e-12;
  int pick = -1;
  for (int c0 = 0; c0 < kNumClasses; ++c0) {
    if (out.losses[c0] > best + kTie) continue;
    if (pick < 0 || std::abs(c0 - 2) < std::abs(pick - 2)) pick = c0;
  }
  out.label = pick;
  return out;
}

// ---------------------------------------------------------------------------
// Quantification

inline std::map<std::string, Distribution, std::less<>> quantify_5class(
    const std::map<std::string, std::vector<int>, std::less<>>& labels) {
  std::map<std::string, Distribution, std::less<>> out;
  for (const auto& [entity, ls] : labels) {
    if (ls.empty()) fail(Errc::EmptyEntity, "entity '" + entity + "' has no tweets");
    Distribution d{};
    for (int l : ls) {
      if (l < 0 || l >= kNumClasses) fail(Errc::BadLabel, "label outside 0..4");
      d[static_cast<std::size_t>(l)] += 1.0;
    }
    for (double& v : d) v /= static_cast<double>(ls.size());
    out[entity] = d;
  }
  return out;
}

inline Distribution mean_distribution(std::span<const Distribution> dists) {
  if (dists.empty()) fail(Errc::EmptyEntity, "no distributions to average");
  Distribution m{};
  for (const auto& d : dists)
    for (int c = 0; c < kNumClasses; ++c) m[c] += d[c];
  for (double& v : m) v /= static_cast<double>(dists.size());
  return m;
}

inline std::map<std::string, Distribution, std::less<>> quantify_5class(
    const std::map<std::string, std::vector<Distribution>, std::less<>>& dists) {
  std::map<std::string, Distribution, std::less<>> out;
  for (const auto& [entity, ds] : dists) {
    if (ds.empty()) fail(Errc::EmptyEntity, "entity '" + entity + "' has no tweets");
    out[entity] = mean_distribution(ds);
  }
  return out;
}

/// B with-replacement resamples per entity, each reduced to its mean
/// distribution. Each entity draws from its own stream derived from `seed`.
inline std::map<std::string, std::vector<Distribution>, std::less<>> bootstrap_entity_rows(
    const std::map<std::string, std::vector<Distribution>, std::less<>>& per_entity, std::size_t B,
    std::uint64_t seed) {
  if (B == 0) fail(Errc::UsageError, "bootstrap needs at least one resample");
  std::map<std::string, std::vector<Distribution>, std::less<>> out;
  for (const auto& [entity, ds] : per_entity) {
    if (ds.empty()) fail(Errc::EmptyEntity, "entity '" + entity + "' has no tweets");
    Rng rng(derive_seed(seed, entity));
    auto& rows = out[entity];
    rows.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
      Distribution m{};
      for (std::size_t n = 0; n < ds.size(); ++n) {
        const auto& d = ds[rng.below(ds.size())];
        for (int c = 0; c < kNumClasses; ++c) m[c] += d[c];
      }
      for (double& v : m) v /= static_cast<double>(ds.size());
      rows.push_back(m);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Workflows

enum class TScope { Entity, Global };

struct TaskInput {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> test;
  std::vector<DistTable> train_dists;  // one table per base model
  std::vector<DistTable> test_dists;
};

struct TaskConfig {
  std::uint64_t seed = 0;
  bool use_flags = true;
  stack::MlpConfig mlp{};
  stack::LogisticConfig logistic{};
  int match_iterations = 20;
  double match_tolerance = 0.02;
  double kappa = 10.0;
  ThresholdScope threshold = ThresholdScope::Global;
  TScope t_scope = TScope::Entity;
  std::size_t bootstrap = 100;
};

struct TaskOutput {
  std::vector<Prediction> predictions;
  QuantTable quantification;
  nlohmann::json summary = nlohmann::json::object();
};

/// Per-tweet five-class distributions for both splits from a network
/// trained on the stacked base-model features of the training split.
struct PipelineOutput {
  std::vector<Distribution> train;
  std::vector<Distribution> test;
};

namespace detail {

inline std::vector<std::vector<double>> stacked_features(std::span<const DatasetRecord> records,
                                                         std::span<const DistTable> tables, bool use_flags) {
  if (tables.empty()) fail(Errc::SchemaMismatch, "at least one base-model distribution file is required");
  std::vector<std::vector<double>> out;
  std::vector<Distribution> dists(tables.size());
  for (const auto& r : records) {
    for (std::size_t m = 0; m < tables.size(); ++m) {
      auto it = tables[m].find(r.id);
      if (it == tables[m].end())
        fail(Errc::FormatError, "model " + std::to_string(m + 1) + " has no distribution for tweet '" + r.id + "'");
      dists[m] = it->second;
    }
    out.push_back(stack::build_features(dists, r.flags, use_flags).values);
  }
  return out;
}

inline void require_gold(std::span<const DatasetRecord> records) {
  for (const auto& r : records)
    if (!r.gold) fail(Errc::BadLabel, "training tweet '" + r.id + "' has no label");
}

inline void require_entities(std::span<const DatasetRecord> records) {
  for (const auto& r : records)
    if (r.entity.empty()) fail(Errc::EmptyEntity, "tweet '" + r.id + "' has no entity");
}

inline stack::FeatureSchema tweet_schema() { return stack::FeatureSchema({{"tweet", kNumClasses, true}}); }

inline std::vector<double> as_row(const Distribution& d) { return {d.begin(), d.end()}; }

/// Mean distribution of each entity's tweets.
inline std::map<std::string, Distribution, std::less<>> entity_means(std::span<const DatasetRecord> records,
                                                                     std::span<const Distribution> dists) {
  std::map<std::string, std::vector<Distribution>, std::less<>> groups;
  for (std::size_t i = 0; i < records.size(); ++i) groups[records[i].entity].push_back(dists[i]);
  return quantify_5class(groups);
}

/// Indices of the tweets forming T for tweet i.
inline std::vector<std::size_t> scope_members(std::span<const DatasetRecord> records, std::size_t i, TScope scope) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < records.size(); ++j)
    if (scope == TScope::Global || records[j].entity == records[i].entity) out.push_back(j);
  return out;
}

inline std::vector<Distribution> gather(std::span<const Distribution> dists, std::span<const std::size_t> idx) {
  std::vector<Distribution> out;
  for (auto j : idx) out.push_back(dists[j]);
  return out;
}

inline Distribution expand(const stack::LogisticModel& m, const std::vector<double>& p) {
  Distribution d{};
  for (std::size_t k = 0; k < m.num_classes(); ++k) d[static_cast<std::size_t>(m.classes[k])] = p[k];
  return d;
}

inline nlohmann::json base_summary(const char* task, const TaskInput& in, const TaskConfig& cfg) {
  return {{"task", task},
          {"seed", cfg.seed},
          {"train", in.train.size()},
          {"test", in.test.size()},
          {"models", in.train_dists.size()}};
}

}  // namespace detail

inline PipelineOutput run_pipeline(const TaskInput& in, const TaskConfig& cfg) {
  if (in.train.empty()) fail(Errc::EmptyInput, "training split is empty");
  if (in.test.empty()) fail(Errc::EmptyInput, "test split is empty");
  if (in.train_dists.size() != in.test_dists.size())
    fail(Errc::SchemaMismatch, "train and test need the same number of base models");
  detail::require_gold(in.train);
  stack::Dataset data{stack::FeatureSchema::pipeline(in.train_dists.size(), cfg.use_flags), {}, {}};
  const auto train_x = detail::stacked_features(in.train, in.train_dists, cfg.use_flags);
  const auto test_x = detail::stacked_features(in.test, in.test_dists, cfg.use_flags);
  for (std::size_t i = 0; i < in.train.size(); ++i) data.add(train_x[i], *in.train[i].gold);
  stack::MlpConfig mlp = cfg.mlp;
  mlp.seed = derive_seed(cfg.seed, std::string_view("pipeline"));
  const auto net = stack::train_mlp(data, mlp);
  PipelineOutput out;
  for (const auto& x : train_x) out.train.push_back(stack::predict_mlp(net, x));
  for (const auto& x : test_x) out.test.push_back(stack::predict_mlp(net, x));
  return out;
}

inline TaskOutput task_a(const TaskInput& in, const TaskConfig& cfg) {
  const auto pipe = run_pipeline(in, cfg);
  stack::Dataset train{detail::tweet_schema(), {}, {}};
  for (std::size_t i = 0; i < in.train.size(); ++i)
    train.add(detail::as_row(pipe.train[i]), *task_class(Task::A, *in.train[i].gold));
  std::vector<std::vector<double>> test;
  for (const auto& d : pipe.test) test.push_back(detail::as_row(d));

  MatchConfig mc{cfg.match_iterations, cfg.match_tolerance, cfg.logistic,
                 derive_seed(cfg.seed, std::string_view("match"))};
  const auto match = iterative_distribution_match(train, test, mc);
  const auto model = stack::train_logistic(match.sample, cfg.logistic);

  TaskOutput out;
  for (std::size_t i = 0; i < in.test.size(); ++i)
    out.predictions.push_back(
        {in.test[i].id, in.test[i].entity, class_to_label(Task::A, stack::predict_class(model, test[i]))});
  out.summary = detail::base_summary("a", in, cfg);
  out.summary["match_trace"] = match.trace;
  out.summary["converged"] = match.converged;
  return out;
}

struct BinaryStage {
  std::vector<int> labels;  // test tweets, 0/1
  std::vector<double> positive;
  PriorTable test_priors;
};

/// Shared by tasks B and D.
inline BinaryStage binary_stage(const TaskInput& in, const TaskConfig& cfg) {
  detail::require_entities(in.train);
  detail::require_entities(in.test);
  const auto pipe = run_pipeline(in, cfg);

  // Tweet distribution to polarity, used to give each entity a prior rate.
  stack::Dataset polar{detail::tweet_schema(), {}, {}};
  for (std::size_t i = 0; i < in.train.size(); ++i)
    if (auto c = task_class(Task::B, *in.train[i].gold)) polar.add(detail::as_row(pipe.train[i]), *c);
  const auto rate_model = stack::train_logistic(polar, cfg.logistic);
  const auto pos = *rate_model.class_index(1);
  auto priors_for = [&](std::span<const DatasetRecord> recs, std::span<const Distribution> dists) {
    PriorTable table;
    for (const auto& [entity, mean] : detail::entity_means(recs, dists)) {
      const double p = std::clamp(stack::predict_logistic(rate_model, detail::as_row(mean))[pos], 1e-9, 1.0 - 1e-9);
      table[entity] = prior_from_rate(entity, p, cfg.kappa);
    }
    return table;
  };
  const PriorTable train_priors = priors_for(in.train, pipe.train);
  BinaryStage stage;
  stage.test_priors = priors_for(in.test, pipe.test);

  stack::Dataset rows{binary_schema(), {}, {}};
  for (std::size_t i = 0; i < in.train.size(); ++i)
    if (auto c = task_class(Task::B, *in.train[i].gold))
      rows.add(binary_features(pipe.train[i], train_priors.at(in.train[i].entity).mean()), *c);
  const auto model = stack::train_logistic(rows, cfg.logistic);

  std::vector<BinaryRow> test_rows;
  for (std::size_t i = 0; i < in.test.size(); ++i) test_rows.push_back({in.test[i].entity, pipe.test[i]});
  auto decision = entity_binary_classify(test_rows, stage.test_priors, model, cfg.threshold);
  stage.labels = std::move(decision.labels);
  stage.positive = std::move(decision.positive);
  return stage;
}

inline TaskOutput task_b(const TaskInput& in, const TaskConfig& cfg) {
  const auto stage = binary_stage(in, cfg);
  TaskOutput out;
  for (std::size_t i = 0; i < in.test.size(); ++i)
    out.predictions.push_back({in.test[i].id, in.test[i].entity, class_to_label(Task::B, stage.labels[i])});
  out.summary = detail::base_summary("b", in, cfg);
  out.summary["kappa"] = cfg.kappa;
  out.summary["threshold_scope"] = cfg.threshold == ThresholdScope::Global ? "global" : "entity";
  return out;
}

inline TaskOutput task_d(const TaskInput& in, const TaskConfig& cfg) {
  const auto stage = binary_stage(in, cfg);
  std::map<std::string, std::pair<long long, long long>, std::less<>> counts;
  for (std::size_t i = 0; i < in.test.size(); ++i) {
    auto& c = counts[in.test[i].entity];
    c.first += stage.labels[i];
    ++c.second;
  }
  TaskOutput out;
  for (const auto& [entity, c] : counts)
    out.quantification[entity] = {beta_posterior(stage.test_priors.at(entity), c.first, c.second).mean()};
  out.summary = detail::base_summary("d", in, cfg);
  out.summary["kappa"] = cfg.kappa;
  return out;
}

struct FiveClassStage {
  std::vector<Distribution> probs;  // test tweets, final logistic output
};

/// Shared by tasks C and E.
inline FiveClassStage five_class_stage(const TaskInput& in, const TaskConfig& cfg) {
  detail::require_entities(in.train);
  detail::require_entities(in.test);
  const auto pipe = run_pipeline(in, cfg);

  // Entity-level model: bootstrap means of an entity's tweets -> the entity's
  // gold label histogram.
  std::map<std::string, std::vector<Distribution>, std::less<>> train_groups;
  std::map<std::string, std::vector<int>, std::less<>> train_gold;
  for (std::size_t i = 0; i < in.train.size(); ++i) {
    train_groups[in.train[i].entity].push_back(pipe.train[i]);
    train_gold[in.train[i].entity].push_back(*in.train[i].gold);
  }
  const auto histograms = quantify_5class(train_gold);
  const auto boot = bootstrap_entity_rows(train_groups, cfg.bootstrap, derive_seed(cfg.seed, std::string_view("boot")));
  std::vector<std::vector<double>> ex, et;
  for (const auto& [entity, rows] : boot)
    for (const auto& r : rows) {
      ex.push_back(detail::as_row(r));
      et.push_back(detail::as_row(histograms.at(entity)));
    }
  const auto entity_model =
      stack::train_logistic_soft(detail::tweet_schema(), ex, et, {0, 1, 2, 3, 4}, cfg.logistic);
  auto entity_dists = [&](std::span<const DatasetRecord> recs, std::span<const Distribution> dists) {
    std::map<std::string, Distribution, std::less<>> out;
    for (const auto& [entity, mean] : detail::entity_means(recs, dists))
      out[entity] = detail::expand(entity_model, stack::predict_logistic(entity_model, detail::as_row(mean)));
    return out;
  };

  const stack::FeatureSchema schema({{"tweet", kNumClasses, true}, {"entity", kNumClasses, true}});
  auto reweighted_rows = [&](std::span<const DatasetRecord> recs, std::span<const Distribution> dists) {
    const auto p_lr = entity_dists(recs, dists);
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto members = detail::scope_members(recs, i, cfg.t_scope);
      const auto T = detail::gather(dists, members);
      const std::size_t t0 = static_cast<std::size_t>(std::find(members.begin(), members.end(), i) - members.begin());
      const Distribution p_new = entity_reweight(T, t0, p_lr.at(recs[i].entity));
      std::vector<double> x(dists[i].begin(), dists[i].end());
      x.insert(x.end(), p_new.begin(), p_new.end());
      rows.push_back(std::move(x));
    }
    return rows;
  };

  stack::Dataset train{schema, {}, {}};
  const auto train_rows = reweighted_rows(in.train, pipe.train);
  for (std::size_t i = 0; i < in.train.size(); ++i) train.add(train_rows[i], *in.train[i].gold);
  const auto model = stack::train_logistic(train, cfg.logistic);

  FiveClassStage stage;
  for (const auto& x : reweighted_rows(in.test, pipe.test))
    stage.probs.push_back(detail::expand(model, stack::predict_logistic(model, x)));
  return stage;
}

inline TaskOutput task_c(const TaskInput& in, const TaskConfig& cfg) {
  const auto stage = five_class_stage(in, cfg);
  TaskOutput out;
  for (std::size_t i = 0; i < in.test.size(); ++i) {
    const auto& p = stage.probs[i];
    const int cls = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    out.predictions.push_back({in.test[i].id, in.test[i].entity, class_to_label(Task::C, cls)});
  }
  out.summary = detail::base_summary("c", in, cfg);
  out.summary["bootstrap"] = cfg.bootstrap;
  out.summary["t_scope"] = cfg.t_scope == TScope::Entity ? "entity" : "global";
  return out;
}

inline TaskOutput task_e(const TaskInput& in, const TaskConfig& cfg) {
  const auto stage = five_class_stage(in, cfg);
  std::map<std::string, std::vector<int>, std::less<>> labels;
  for (std::size_t i = 0; i < in.test.size(); ++i) {
    const auto members = detail::scope_members(in.test, i, cfg.t_scope);
    const auto T = detail::gather(stage.probs, members);
    const std::size_t t0 = static_cast<std::size_t>(std::find(members.begin(), members.end(), i) - members.begin());
    labels[in.test[i].entity].push_back(min_expected_distance_label(T, t0).label);
  }
  TaskOutput out;
  for (const auto& [entity, d] : quantify_5class(labels)) out.quantification[entity] = {d.begin(), d.end()};
  out.summary = detail::base_summary("e", in, cfg);
  out.summary["bootstrap"] = cfg.bootstrap;
  out.summary["t_scope"] = cfg.t_scope == TScope::Entity ? "entity" : "global";
  return out;
}

inline TaskOutput run_task(Task task, const TaskInput& in, const TaskConfig& cfg) {
  switch (task) {
    case Task::A:
      return task_a(in, cfg);
    case Task::B:
      return task_b(in, cfg);
    case Task::C:
      return task_c(in, cfg);
    case Task::D:
      return task_d(in, cfg);
    default:
      return task_e(in, cfg);
  }
}

/// Gold per-entity quantification from labeled records: the positive rate
/// among non-neutral tweets (task D) or the five-class histogram (task E).
inline QuantTable gold_quantification(std::span<const DatasetRecord> records, Task task) {
  std::map<std::string, std::vector<int>, std::less<>> labels;
  for (const auto& r : records) {
    if (!r.gold) continue;
    if (r.entity.empty()) fail(Errc::EmptyEntity, "tweet '" + r.id + "' has no entity");
    labels[r.entity].push_back(*r.gold);
  }
  QuantTable out;
  if (task == Task::D) {
    for (const auto& [entity, ls] : labels) {
      std::size_t pos = 0, n = 0;
      for (int l : ls)
        if (auto c = task_class(Task::D, l)) {
          pos += static_cast<std::size_t>(*c);
          ++n;
        }
      if (n == 0) continue;
      out[entity] = {static_cast<double>(pos) / static_cast<double>(n)};
    }
    return out;
  }
  for (const auto& [entity, d] : quantify_5class(labels)) out[entity] = {d.begin(), d.end()};
  return out;
}

}  // namespace sentitree::tasks
