#pragma once

// Central finite-difference verification of the tree-LSTM gradients, plus a
// random instance generator shared by tests and the command-line tool.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <string>
#include <vector>

#include "sentitree/neural.hpp"
#include "sentitree/rng.hpp"
#include "sentitree/treebank.hpp"

namespace sentitree::neural {

/// Scalar-loop evaluation of the model written directly from the cell
/// equations, independent of the vectorized kernels. Instantiated with
/// `long double` it serves as the finite-difference oracle.
namespace reference {

template <class Scalar>
struct State {
  std::vector<Scalar> h, c, meta;
};

template <class Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

/// out[m] = sum_a sum_b S[a] T[a][b][m] S[b] + sum_a W[m][a] S[a]
template <class Scalar>
std::vector<Scalar> compose(const std::vector<Scalar>& S, const Vec& T, const Vec& W, int d) {
  const int D = static_cast<int>(S.size());
  std::vector<Scalar> out(static_cast<std::size_t>(d), Scalar(0));
  for (int m = 0; m < d; ++m) {
    Scalar bilinear = 0;
    for (int a = 0; a < D; ++a) {
      if (S[a] == Scalar(0)) continue;
      Scalar row = 0;
      for (int b = 0; b < D; ++b) row += static_cast<Scalar>(T[(static_cast<std::size_t>(a) * D + b) * d + m]) * S[b];
      bilinear += S[a] * row;
    }
    Scalar linear = 0;
    for (int a = 0; a < D; ++a) linear += static_cast<Scalar>(W[static_cast<std::size_t>(m) * D + a]) * S[a];
    out[m] = bilinear + linear;
  }
  return out;
}

template <class Scalar>
std::vector<Scalar> meta_of(const TreeNode& n, const CategoryTable& table) {
  std::vector<Scalar> m(kMetaDim, Scalar(0));
  const int code = table.code(n.category);
  for (int b = 0; b < kCategoryBits; ++b) m[b] = static_cast<Scalar>((code >> (kCategoryBits - 1 - b)) & 1);
  m[kMetaDim - 1] = n.entity ? Scalar(1) : Scalar(0);
  return m;
}

template <class Scalar>
std::vector<Scalar> sentiment(const std::vector<Scalar>& h, const TreeLstmParams& p) {
  const int d = p.hyper.d;
  std::vector<Scalar> z(kNumClasses);
  Scalar mx = -std::numeric_limits<Scalar>::infinity();
  for (int c = 0; c < kNumClasses; ++c) {
    Scalar acc = 0;
    for (int m = 0; m < d; ++m) acc += static_cast<Scalar>(p.output[static_cast<std::size_t>(c) * d + m]) * h[m];
    z[c] = acc;
    mx = std::max(mx, acc);
  }
  Scalar sum = 0;
  for (auto& v : z) sum += (v = std::exp(v - mx));
  for (auto& v : z) v /= sum;
  return z;
}

template <class Scalar>
State<Scalar> cell(const State<Scalar>& l, const State<Scalar>& r, const std::vector<Scalar>& meta,
                   const TreeLstmParams& p) {
  const int d = p.hyper.d;
  // [V_t, D_t | O_{t-1}] and [C''_{t-1}, D_t | C_{t-1}, D_{t-1}]
  std::vector<Scalar> main_in = l.h;
  main_in.insert(main_in.end(), r.meta.begin(), r.meta.end());
  main_in.insert(main_in.end(), r.meta.begin(), r.meta.end());
  main_in.insert(main_in.end(), r.h.begin(), r.h.end());
  std::vector<Scalar> cross_in = l.c;
  cross_in.insert(cross_in.end(), r.meta.begin(), r.meta.end());
  cross_in.insert(cross_in.end(), r.c.begin(), r.c.end());
  cross_in.insert(cross_in.end(), l.meta.begin(), l.meta.end());
  const int pair = (l.meta[kMetaDim - 1] != Scalar(0) ? 2 : 0) + (r.meta[kMetaDim - 1] != Scalar(0) ? 1 : 0);
  auto L = [&](int k, const std::vector<Scalar>& S) {
    return compose<Scalar>(S, p.tensors[k], p.linear[k][pair], d);
  };
  auto f = L(0, main_in), i = L(1, main_in), cp = L(2, main_in);
  auto i2 = L(3, cross_in), c2 = L(4, cross_in), g = L(5, main_in);
  State<Scalar> out;
  out.h.resize(d);
  out.c.resize(d);
  out.meta = meta;
  for (int m = 0; m < d; ++m) {
    const Scalar C = r.c[m] * sigmoid(f[m]) + std::tanh(cp[m]) * sigmoid(i[m]) + sigmoid(i2[m]) * std::tanh(c2[m]);
    out.c[m] = C;
    out.h[m] = sigmoid(g[m]) * std::tanh(C);
  }
  return out;
}

/// States and per-node sentiments for every node of the tree.
template <class Scalar>
std::pair<std::vector<State<Scalar>>, std::vector<std::vector<Scalar>>> forward(const ParseTree& tree,
                                                                                const TreeLstmParams& p) {
  std::vector<State<Scalar>> states(tree.size());
  std::vector<std::vector<Scalar>> sent(tree.size());
  for (std::size_t n = 0; n < tree.size(); ++n) {
    const TreeNode& node = tree.node(n);
    if (node.is_leaf()) {
      const Vec& e = p.embedding(node.token);
      states[n].h.assign(e.begin(), e.end());
      states[n].c.assign(e.size(), Scalar(0));
      states[n].meta = meta_of<Scalar>(node, p.categories);
    } else {
      states[n] = cell<Scalar>(states[static_cast<std::size_t>(node.left)], states[static_cast<std::size_t>(node.right)],
                               meta_of<Scalar>(node, p.categories), p);
    }
    sent[n] = sentiment<Scalar>(states[n].h, p);
  }
  return {std::move(states), std::move(sent)};
}

template <class Scalar>
Scalar loss(const ParseTree& tree, const TreeLstmParams& p, Supervision mode) {
  auto [states, sent] = forward<Scalar>(tree, p);
  auto nodes = supervised_nodes(tree, mode);
  Scalar total = 0;
  for (std::size_t n : nodes) total -= std::log(sent[n][static_cast<std::size_t>(*tree.node(n).label)]);
  return total / static_cast<Scalar>(nodes.size());
}

}  // namespace reference

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t failures = 0;  // coordinates above tolerance
  std::string worst;        // block/index of the worst coordinate
};

inline double relative_error(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); }

/// Precision used to evaluate the loss at the perturbed points. Parameters and
/// the step are 64-bit either way; `Native` reuses the library forward pass
/// and cannot resolve partials much below 1e-7.
enum class FdPrecision { Extended, Native };

/// Compares every analytic partial with (L(x+h) - L(x-h)) / 2h.
inline GradCheckReport gradient_check(const ParseTree& tree, TreeLstmParams params, Supervision mode,
                                      double step = 1e-5, double tolerance = 1e-4,
                                      FdPrecision precision = FdPrecision::Extended) {
  const TreeLstmParams grad = backward(tree, forward(tree, params), params, mode);
  GradCheckReport rep;
  auto objective = [&]() -> long double {
    if (precision == FdPrecision::Native) return loss(tree, forward(tree, params), mode);
    return reference::loss<long double>(tree, params, mode);
  };

  auto check_block = [&](Vec& theta, const Vec* analytic, const std::string& name) {
    for (std::size_t q = 0; q < theta.size(); ++q) {
      const double saved = theta[q];
      const double up_x = saved + step;
      const double down_x = saved - step;
      theta[q] = up_x;
      const long double up = objective();
      theta[q] = down_x;
      const long double down = objective();
      theta[q] = saved;
      const double numeric = static_cast<double>((up - down) / (static_cast<long double>(up_x) - down_x));
      const double a = analytic ? (*analytic)[q] : 0.0;
      const double rel = relative_error(a, numeric);
      ++rep.coordinates;
      if (rel > tolerance) ++rep.failures;
      rep.max_abs_error = std::max(rep.max_abs_error, std::abs(a - numeric));
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst = name + "[" + std::to_string(q) + "]";
      }
    }
  };

  for (int k = 0; k < kNumGates; ++k) {
    check_block(params.tensors[k], &grad.tensors[k], "T" + std::to_string(k));
    for (int p = 0; p < kNumPairs; ++p)
      check_block(params.linear[k][p], &grad.linear[k][p], "W" + std::to_string(k) + "_" + std::to_string(p));
  }
  check_block(params.output, &grad.output, "Wout");
  for (auto& [word, v] : params.embeddings) {
    auto it = grad.embeddings.find(word);
    check_block(v, it == grad.embeddings.end() ? nullptr : &it->second, "E(" + word + ")");
  }
  return rep;
}

/// Random binary tree over `leaves` leaves with random categories, entity
/// bits (propagated upward by OR) and labels; at least the root is labeled.
inline ParseTree random_tree(Rng& rng, int leaves, const std::vector<std::string>& words,
                             const std::vector<std::string>& categories, double entity_rate = 0.3,
                             double label_rate = 0.8) {
  auto pick = [&](const std::vector<std::string>& v) { return v[rng.below(v.size())]; };
  auto label = [&]() -> std::optional<int> {
    if (!rng.coin(label_rate)) return std::nullopt;
    return static_cast<int>(rng.below(kNumClasses));
  };
  std::vector<ParseTree> parts;
  for (int i = 0; i < leaves; ++i) parts.push_back(ParseTree::leaf(pick(words), pick(categories), label(), rng.coin(entity_rate)));
  while (parts.size() > 1) {
    std::size_t i = rng.below(parts.size() - 1);
    ParseTree joined = ParseTree::join(parts[i], parts[i + 1], pick(categories), label());
    parts[i] = std::move(joined);
    parts.erase(parts.begin() + static_cast<std::ptrdiff_t>(i) + 1);
  }
  ParseTree t = std::move(parts.front());
  if (!t.root().label) t.node(t.size() - 1).label = static_cast<int>(rng.below(kNumClasses));
  return t;
}

struct GradCheckInstance {
  ParseTree tree;
  TreeLstmParams params;
};

/// One random (tree, params) pair at dimension d. Categories include one the
/// table does not know, so the all-zero code is exercised too.
inline GradCheckInstance random_instance(std::uint64_t seed, int d, int max_leaves = 4, double lo = 0.0,
                                         double hi = 0.5) {
  Rng rng(seed);
  const std::vector<std::string> words{"amobee", "is", "awesome", "not", "bad", "great"};
  const std::vector<std::string> cats{"NN", "S", "VP", "JJ", "NP", "UNKNOWNCAT"};
  const int leaves = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(max_leaves)));
  ParseTree tree = random_tree(rng, leaves, words, cats);
  auto vocab = tree.tokens();
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
  if (rng.coin(0.3) && !vocab.empty()) vocab.pop_back();  // leave a word unknown
  TreeLstmParams params = TreeLstmParams::zeros(Hyper{d}, CategoryTable({"NN", "S", "VP", "JJ", "NP"}), vocab);
  // Signed magnitudes in [lo, hi], scaled by fan-in to keep gates out of saturation.
  const double D = params.hyper.D();
  auto fill = [&](Vec& v, double scale) {
    for (double& x : v) x = (rng.coin() ? 1.0 : -1.0) * scale * rng.uniform(lo, hi);
  };
  for (int k = 0; k < kNumGates; ++k) {
    fill(params.tensors[k], 2.0 / D);
    for (auto& w : params.linear[k]) fill(w, 2.0 / std::sqrt(D));
  }
  fill(params.output, 2.0);
  for (auto& [w, v] : params.embeddings) fill(v, 2.0);
  return {std::move(tree), std::move(params)};
}

}  // namespace sentitree::neural
