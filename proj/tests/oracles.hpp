#pragma once

// Brute-force reference computations and synthetic data generators shared by
// the unit tests and the acceptance binary.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sentitree/aggregate.hpp"
#include "sentitree/neural.hpp"
#include "sentitree/rng.hpp"
#include "sentitree/stack.hpp"

namespace oracle {

using Dist5 = std::array<double, 5>;

// Direct transcription of the composition: out[m] = sum_ab S_a T_abm S_b + sum_a W_ma S_a.
inline std::vector<double> scalar_compose(const std::vector<double>& S, const sentitree::neural::TreeLstmParams& p, int k, int pair) {
  const int d = p.hyper.d, D = p.hyper.D();
  std::vector<double> out(d, 0.0);
  for (int m = 0; m < d; ++m) {
    double bil = 0.0;
    for (int a = 0; a < D; ++a)
      for (int b = 0; b < D; ++b) bil += S[a] * p.tensors[k][(a * D + b) * d + m] * S[b];
    double lin = 0.0;
    for (int a = 0; a < D; ++a) lin += p.linear[k][pair][m * D + a] * S[a];
    out[m] = bil + lin;
  }
  return out;
}


/// Minimum-cost transport on the line: repeatedly ship mass from the
/// leftmost remaining supply to the leftmost remaining demand.
inline double greedy_transport(std::vector<double> supply, std::vector<double> demand) {
  double cost = 0.0;
  std::size_t i = 0, j = 0;
  const std::size_t n = supply.size();
  while (i < n && j < n) {
    if (supply[i] <= 0.0) {
      ++i;
      continue;
    }
    if (demand[j] <= 0.0) {
      ++j;
      continue;
    }
    const double moved = std::min(supply[i], demand[j]);
    cost += moved * std::abs(static_cast<double>(i) - static_cast<double>(j));
    supply[i] -= moved;
    demand[j] -= moved;
    if (supply[i] <= 0.0) ++i;
    if (demand[j] <= 0.0) ++j;
  }
  return cost;
}

/// p_new(t0, c0) = sum_c p(t0, c) p_lr(c0) / sum_t p(t, c), by double loop.
inline Dist5 reweight_raw(const std::vector<Dist5>& p, std::size_t t0, const Dist5& p_lr) {
  Dist5 out{};
  for (int c0 = 0; c0 < 5; ++c0) {
    double s = 0.0;
    for (int c = 0; c < 5; ++c) {
      double col = 0.0;
      for (const auto& t : p) col += t[c];
      if (col > 0.0) s += p[t0][c] * p_lr[c0] / col;
    }
    out[c0] = s;
  }
  return out;
}

inline Dist5 normalized(Dist5 v) {
  double s = 0.0;
  for (double x : v) s += x;
  for (double& x : v) x /= s;
  return v;
}

/// loss(c0) = sum_c |c - c0| p(t0, c) / sum_t p(t, c), by double loop.
inline Dist5 distance_losses(const std::vector<Dist5>& p, std::size_t t0) {
  Dist5 out{};
  for (int c0 = 0; c0 < 5; ++c0)
    for (int c = 0; c < 5; ++c) {
      double col = 0.0;
      for (const auto& t : p) col += t[c];
      if (col > 0.0) out[c0] += std::abs(c - c0) * p[t0][c] / col;
    }
  return out;
}

/// Argmin of the losses; ties toward class 2, then the lower class.
inline int distance_argmin(const Dist5& losses, double tie = 1e-12) {
  double best = losses[0];
  for (double v : losses) best = std::min(best, v);
  const int order[5] = {2, 1, 3, 0, 4};
  for (int c : order)
    if (losses[c] <= best + tie) return c;
  return 2;
}

inline Dist5 random_dist(sentitree::Rng& rng, double floor = 0.0) {
  Dist5 d{};
  double s = 0.0;
  for (double& v : d) s += (v = floor + rng.uniform());
  for (double& v : d) v /= s;
  return d;
}

inline std::vector<Dist5> random_tweets(sentitree::Rng& rng, std::size_t n) {
  std::vector<Dist5> out(n);
  for (auto& d : out) d = random_dist(rng, 0.01);
  return out;
}

/// Tweets with one long sentence carrying the gold label and one or two
/// short sentences carrying a random label, all equally confident.
inline std::vector<sentitree::aggregate::LabeledTweet> long_sentence_signal(std::uint64_t seed, std::size_t n = 200) {
  sentitree::Rng rng(seed);
  auto peaked = [](int label) {
    sentitree::aggregate::Distribution d{};
    for (int c = 0; c < 5; ++c) d[c] = c == label ? 0.6 : 0.1;
    return d;
  };
  std::vector<sentitree::aggregate::LabeledTweet> out;
  for (std::size_t i = 0; i < n; ++i) {
    sentitree::aggregate::LabeledTweet t;
    t.gold = static_cast<int>(rng.below(5));
    const std::size_t shorts = 1 + rng.below(2);
    const std::size_t at = rng.below(shorts + 1);
    for (std::size_t k = 0; k <= shorts; ++k) {
      sentitree::aggregate::SentencePrediction s;
      s.known_fraction = 1.0;
      if (k == at) {
        s.dist = peaked(t.gold);
        s.length = static_cast<double>(12 + rng.below(10));
      } else {
        s.dist = peaked(static_cast<int>(rng.below(5)));
        s.length = static_cast<double>(1 + rng.below(3));
      }
      t.sentences.push_back(s);
    }
    out.push_back(std::move(t));
  }
  return out;
}

/// Ten five-wide distribution groups. The label depends only on groups
/// "signal_a" and "signal_b"; the other eight are independent noise.
inline sentitree::stack::Dataset two_signal_groups(std::uint64_t seed, std::size_t n = 300) {
  using namespace sentitree::stack;
  std::vector<FeatureGroup> groups;
  const std::vector<std::string> names{"noise1", "signal_a", "noise2", "noise3", "noise4",
                                       "signal_b", "noise5", "noise6", "noise7", "noise8"};
  for (const auto& name : names) groups.push_back({name, 5, true});
  Dataset data{FeatureSchema(groups), {}, {}};
  sentitree::Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row;
    std::array<Dist5, 10> parts;
    for (auto& p : parts) {
      p = random_dist(rng);
      row.insert(row.end(), p.begin(), p.end());
    }
    const double score = (parts[1][0] - parts[1][1]) + (parts[5][0] - parts[5][1]);
    data.add(std::move(row), score > 0.0 ? 1 : 0);
  }
  return data;
}

}  // namespace oracle
