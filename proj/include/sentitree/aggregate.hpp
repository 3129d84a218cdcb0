#pragma once

// Sentence-to-tweet aggregation. Each sentence distribution is weighted by
//
//   h(f, l, pol) = (1 + f)^alpha * l^beta * (1 + pol)^gamma + 1
//   pol          = |10 vn + n - p - 10 vp|
//
// where f is the fraction of known words and l the sentence length.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sentitree/error.hpp"
#include "sentitree/treebank.hpp"

namespace sentitree::aggregate {

using Distribution = std::array<double, kNumClasses>;

struct SentencePrediction {
  Distribution dist{};
  double known_fraction = 1.0;  // f in [0, 1]
  double length = 1.0;          // l >= 1
};

struct AggregationParams {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;

  friend bool operator==(const AggregationParams&, const AggregationParams&) = default;
};

inline double polarity(const Distribution& p) { return std::abs(10.0 * p[0] + p[1] - p[3] - 10.0 * p[4]); }

inline double weight(const SentencePrediction& s, const AggregationParams& params) {
  return std::pow(1.0 + s.known_fraction, params.alpha) * std::pow(s.length, params.beta) *
             std::pow(1.0 + polarity(s.dist), params.gamma) +
         1.0;
}

/// Convex combination of distributions with positive weights, renormalized.
inline Distribution combine(std::span<const SentencePrediction> sentences, std::span<const double> weights) {
  if (sentences.empty()) fail(Errc::EmptyTweet, "tweet has no sentences");
  if (weights.size() != sentences.size()) fail(Errc::LengthMismatch, "one weight per sentence required");
  double total = 0.0;
  for (double w : weights) total += w;
  if (!std::isfinite(total) || total <= 0.0) fail(Errc::NumericFailure, "aggregation weights are not finite");
  Distribution out{};
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    const double share = weights[i] / total;
    for (int c = 0; c < kNumClasses; ++c) out[c] += share * sentences[i].dist[c];
  }
  double sum = 0.0;
  for (double v : out) sum += v;
  for (double& v : out) v /= sum;
  return out;
}

inline Distribution aggregate_tweet(std::span<const SentencePrediction> sentences, const AggregationParams& params) {
  if (sentences.empty()) fail(Errc::EmptyTweet, "tweet has no sentences");
  std::vector<double> w(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) w[i] = weight(sentences[i], params);
  return combine(sentences, w);
}

struct LabeledTweet {
  std::vector<SentencePrediction> sentences;
  int gold = 0;
};

/// Mean cross-entropy of aggregated distributions against gold labels.
inline double objective(std::span<const LabeledTweet> tweets, const AggregationParams& params) {
  double total = 0.0;
  for (const auto& t : tweets) {
    const Distribution p = aggregate_tweet(t.sentences, params);
    total -= std::log(std::max(p[static_cast<std::size_t>(t.gold)], 1e-300));
  }
  return total / static_cast<double>(tweets.size());
}

struct FitConfig {
  std::vector<double> grid{-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
  double initial_step = 0.25;
  double min_step = 1e-3;
  int max_rounds = 200;
};

struct FitResult {
  AggregationParams params;
  double objective = 0.0;
  double best_grid_objective = 0.0;
  std::size_t grid_points = 0;
};

/// Grid search over (alpha, beta, gamma), then coordinate descent from the
/// best grid point. Ties prefer the point closest to the origin (L1), then the
/// lowest grid index, so constant objectives return (0, 0, 0).
inline FitResult fit_params(std::span<const LabeledTweet> tweets, const FitConfig& config = {}) {
  if (tweets.empty()) fail(Errc::EmptyInput, "no tweets to fit aggregation parameters");
  if (config.grid.empty()) fail(Errc::EmptyInput, "empty parameter grid");
  for (const auto& t : tweets)
    if (t.gold < 0 || t.gold >= kNumClasses) fail(Errc::BadLabel, "gold label outside 0..4");

  FitResult best;
  best.objective = std::numeric_limits<double>::infinity();
  double best_norm = std::numeric_limits<double>::infinity();
  for (double a : config.grid)
    for (double b : config.grid)
      for (double g : config.grid) {
        AggregationParams p{a, b, g};
        const double obj = objective(tweets, p);
        const double norm = std::abs(a) + std::abs(b) + std::abs(g);
        ++best.grid_points;
        if (obj < best.objective || (obj == best.objective && norm < best_norm)) {
          best.objective = obj;
          best.params = p;
          best_norm = norm;
        }
      }
  best.best_grid_objective = best.objective;

  double step = config.initial_step;
  for (int round = 0; round < config.max_rounds && step >= config.min_step; ++round) {
    bool improved = false;
    for (int coord = 0; coord < 3; ++coord) {
      for (double dir : {1.0, -1.0}) {
        AggregationParams p = best.params;
        double* field = coord == 0 ? &p.alpha : coord == 1 ? &p.beta : &p.gamma;
        *field += dir * step;
        const double obj = objective(tweets, p);
        if (obj < best.objective) {
          best.objective = obj;
          best.params = p;
          improved = true;
          break;
        }
      }
    }
    if (!improved) step *= 0.5;
  }
  return best;
}

}  // namespace sentitree::aggregate
