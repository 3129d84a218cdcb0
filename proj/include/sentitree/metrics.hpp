#pragma once

// Classification and quantification measures: macro-averaged recall,
// accuracy, macro-averaged MAE, smoothed KL divergence and ordinal EMD.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sentitree/error.hpp"

namespace sentitree::metrics {

/// Gold x predicted counts.
class ConfusionTable {
 public:
  explicit ConfusionTable(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {}

  static ConfusionTable from_labels(std::span<const int> gold, std::span<const int> pred, std::size_t classes) {
    if (gold.size() != pred.size()) fail(Errc::LengthMismatch, "gold and predicted label counts differ");
    ConfusionTable t(classes);
    for (std::size_t i = 0; i < gold.size(); ++i) t.add(gold[i], pred[i]);
    return t;
  }

  void add(int gold, int pred, std::size_t count = 1) {
    if (gold < 0 || pred < 0 || static_cast<std::size_t>(gold) >= n_ || static_cast<std::size_t>(pred) >= n_)
      fail(Errc::BadLabel, "label outside the table's classes");
    counts_[static_cast<std::size_t>(gold) * n_ + static_cast<std::size_t>(pred)] += count;
  }

  std::size_t at(std::size_t gold, std::size_t pred) const { return counts_[gold * n_ + pred]; }
  std::size_t classes() const noexcept { return n_; }

  std::size_t gold_total(std::size_t gold) const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < n_; ++p) s += at(gold, p);
    return s;
  }

  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }

  std::size_t trace() const {
    std::size_t s = 0;
    for (std::size_t k = 0; k < n_; ++k) s += at(k, k);
    return s;
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

inline double macro_recall(const ConfusionTable& conf) {
  if (conf.classes() == 0) fail(Errc::EmptyInput, "confusion table has no classes");
  double sum = 0.0;
  for (std::size_t k = 0; k < conf.classes(); ++k) {
    const std::size_t row = conf.gold_total(k);
    if (row == 0) fail(Errc::EmptyGoldClass, "gold class " + std::to_string(k) + " has no items");
    sum += static_cast<double>(conf.at(k, k)) / static_cast<double>(row);
  }
  return sum / static_cast<double>(conf.classes());
}

inline double accuracy(const ConfusionTable& conf) {
  const std::size_t n = conf.total();
  if (n == 0) fail(Errc::EmptyInput, "no evaluated items");
  return static_cast<double>(conf.trace()) / static_cast<double>(n);
}

/// Numeric value per class index; unit-spaced 0..4 by default.
struct LabelScale {
  std::vector<double> values{0.0, 1.0, 2.0, 3.0, 4.0};

  double operator()(int k) const {
    if (k < 0 || static_cast<std::size_t>(k) >= values.size()) fail(Errc::BadLabel, "label outside scale");
    return values[static_cast<std::size_t>(k)];
  }
};

/// Mean over the gold classes that occur of the within-class mean |pred - gold|.
inline double macro_mae(std::span<const int> gold, std::span<const int> pred, const LabelScale& scale = {}) {
  if (gold.size() != pred.size()) fail(Errc::LengthMismatch, "gold and predicted label counts differ");
  if (gold.empty()) fail(Errc::EmptyGoldClass, "no gold items");
  std::map<int, std::pair<double, std::size_t>> per_class;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    auto& [err, n] = per_class[gold[i]];
    err += std::abs(scale(pred[i]) - scale(gold[i]));
    ++n;
  }
  double sum = 0.0;
  for (const auto& [k, v] : per_class) sum += v.first / static_cast<double>(v.second);
  return sum / static_cast<double>(per_class.size());
}

/// KL(true || est) after additive smoothing of both arguments:
/// x' = (x + eps) / (1 + n eps).
inline double kld(std::span<const double> truth, std::span<const double> est, double epsilon = 1e-3) {
  if (truth.size() != est.size()) fail(Errc::LengthMismatch, "distributions differ in length");
  if (truth.empty()) fail(Errc::LengthMismatch, "empty distributions");
  const double denom = 1.0 + static_cast<double>(truth.size()) * epsilon;
  double sum = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double t = (truth[i] + epsilon) / denom;
    const double e = (est[i] + epsilon) / denom;
    if (t > 0.0) sum += t * std::log(t / e);
  }
  return std::max(0.0, sum);
}

/// Earth mover's distance on a unit-spaced ordinal line: L1 distance of CDFs.
inline double emd_ordinal(std::span<const double> truth, std::span<const double> est) {
  if (truth.size() != est.size()) fail(Errc::LengthMismatch, "distributions differ in length");
  double cdf_t = 0.0, cdf_e = 0.0, sum = 0.0;
  for (std::size_t j = 0; j + 1 < truth.size(); ++j) {
    cdf_t += truth[j];
    cdf_e += est[j];
    sum += std::abs(cdf_t - cdf_e);
  }
  return sum;
}

}  // namespace sentitree::metrics
