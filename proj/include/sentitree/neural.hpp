#pragma once

// Entity-aware tree-structured LSTM over binary constituency trees.
//
// Every internal node runs one cell over its two children. Each of the six
// gate pre-activations is a bilinear form plus one of four linear maps,
// chosen by whether the entity-of-interest occurs in the left and/or right
// child:
//
//   L^k(S) = S T^k S^T + W^k_{I,J} S^T,    S in R^D, D = 2d + 14
//
// Gate inputs (left child l, right child r):
//   f, i, C', g  : S = [l.h, r.meta | r.o]         (r.o = [r.meta, r.h])
//   i'', C''     : S = [l.c, r.meta | r.c, l.meta]
//
//   C = r.c * f + C' * i + i'' * C''
//   h = g * tanh(C),  H = W_out h,  o = [meta, h]

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sentitree/error.hpp"
#include "sentitree/io.hpp"
#include "sentitree/rng.hpp"
#include "sentitree/treebank.hpp"

namespace sentitree::neural {

using Vec = std::vector<double>;
using Distribution = std::array<double, kNumClasses>;

inline constexpr int kCategoryBits = 6;
inline constexpr int kMetaDim = 7;
inline constexpr int kNumGates = 6;
inline constexpr int kNumPairs = 4;
inline constexpr std::string_view kUnknownWord = "<unk>";

struct Hyper {
  int d = 25;

  int D() const noexcept { return 2 * d + 2 * kMetaDim; }
  int arg_dim() const noexcept { return d + kMetaDim; }
  friend bool operator==(const Hyper&, const Hyper&) = default;
};

/// Gate order fixes which composition k each gate uses.
enum class Gate : int { Forget = 0, Input = 1, Candidate = 2, CrossInput = 3, CrossCandidate = 4, Output = 5 };

using Meta = std::array<double, kMetaDim>;

/// Maps categories to 6-bit codes: the i-th configured category (0-based)
/// gets code i+1, so the all-zero code is reserved for unknown categories.
class CategoryTable {
 public:
  static constexpr std::size_t kCapacity = (1u << kCategoryBits) - 1;

  CategoryTable() = default;
  explicit CategoryTable(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (i < kCapacity) index_.emplace(names_[i], static_cast<int>(i + 1));
  }

  /// Penn Treebank phrase and POS tags plus a few tweet-specific tags.
  static CategoryTable penn() {
    return CategoryTable({"NN",  "S",    "NP",  "VP",   "PP",   "ADJP", "ADVP", "SBAR", "JJ",  "JJR", "JJS",
                          "NNS", "NNP",  "NNPS", "PRP", "PRP$", "VB",   "VBD",  "VBG",  "VBN", "VBP", "VBZ",
                          "RB",  "RBR",  "RBS", "DT",   "IN",   "CC",   "CD",   "MD",   "TO",  "UH",  "WP",
                          "WDT", "WRB",  "EX",  "FW",   "POS",  "RP",   "SYM",  "PDT",  ".",   ",",   ":",
                          "X",   "FRAG", "SQ",  "SINV", "SBARQ", "WHNP", "WHADVP", "QP", "PRN", "NX",  "UCP",
                          "CONJP", "INTJ", "LST", "EMO", "URL", "HT",   "USR",  "@"});
  }

  int code(std::string_view category) const {
    auto it = index_.find(std::string(category));
    return it == index_.end() ? 0 : it->second;
  }

  const std::vector<std::string>& names() const noexcept { return names_; }
  friend bool operator==(const CategoryTable& a, const CategoryTable& b) { return a.names_ == b.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> index_;
};

/// First six entries: category code, most significant bit first. Last entry: entity bit.
inline Meta encode_metadata(std::string_view category, bool entity, const CategoryTable& table) {
  Meta m{};
  const int code = table.code(category);
  for (int b = 0; b < kCategoryBits; ++b) m[static_cast<std::size_t>(b)] = (code >> (kCategoryBits - 1 - b)) & 1;
  m[kMetaDim - 1] = entity ? 1.0 : 0.0;
  return m;
}

/// Which of the four entity-indicator linear maps is active.
struct EntityPair {
  bool left = false;
  bool right = false;
  int index() const noexcept { return (left ? 2 : 0) + (right ? 1 : 0); }
};

/// All learnable arrays. Dense blocks are flat, row-major:
///   tensors[k][(a*D + b)*d + m],  linear[k][pair][m*D + a],  output[c*d + m].
struct TreeLstmParams {
  Hyper hyper;
  CategoryTable categories;
  std::array<Vec, kNumGates> tensors;
  std::array<std::array<Vec, kNumPairs>, kNumGates> linear;
  Vec output;
  std::map<std::string, Vec, std::less<>> embeddings;

  static TreeLstmParams zeros(Hyper hyper, CategoryTable categories, std::span<const std::string> vocab = {}) {
    TreeLstmParams p;
    p.hyper = hyper;
    p.categories = std::move(categories);
    const auto D = static_cast<std::size_t>(hyper.D());
    const auto d = static_cast<std::size_t>(hyper.d);
    for (auto& t : p.tensors) t.assign(D * D * d, 0.0);
    for (auto& set : p.linear)
      for (auto& w : set) w.assign(d * D, 0.0);
    p.output.assign(kNumClasses * d, 0.0);
    p.embeddings.emplace(std::string(kUnknownWord), Vec(d, 0.0));
    for (const auto& w : vocab) p.embeddings.emplace(w, Vec(d, 0.0));
    return p;
  }

  /// Uniform(-r, r) with r = 1/sqrt(D) for every entry, embeddings included.
  static TreeLstmParams random(Hyper hyper, CategoryTable categories, std::span<const std::string> vocab,
                               std::uint64_t seed, std::optional<double> range = std::nullopt) {
    TreeLstmParams p = zeros(hyper, std::move(categories), vocab);
    const double r = range.value_or(1.0 / std::sqrt(static_cast<double>(hyper.D())));
    Rng rng(seed);
    p.for_each_block([&](Vec& v) {
      for (double& x : v) x = rng.uniform(-r, r);
    });
    return p;
  }

  /// Same dense shapes, zero values, no embeddings. Used for gradients.
  TreeLstmParams zeros_like() const {
    TreeLstmParams g = zeros(hyper, categories);
    g.embeddings.clear();
    return g;
  }

  const Vec& embedding(std::string_view word) const {
    if (auto it = embeddings.find(word); it != embeddings.end()) return it->second;
    auto unk = embeddings.find(kUnknownWord);
    if (unk == embeddings.end()) fail(Errc::ShapeMismatch, "parameters lack the unknown-word vector");
    return unk->second;
  }

  bool knows(std::string_view word) const { return embeddings.find(word) != embeddings.end(); }

  /// Visits dense blocks in a fixed order, then embeddings in key order.
  template <class F>
  void for_each_block(F&& f) {
    for (auto& t : tensors) f(t);
    for (auto& set : linear)
      for (auto& w : set) f(w);
    f(output);
    for (auto& [word, v] : embeddings) f(v);
  }
  template <class F>
  void for_each_block(F&& f) const {
    for (const auto& t : tensors) f(t);
    for (const auto& set : linear)
      for (const auto& w : set) f(w);
    f(output);
    for (const auto& [word, v] : embeddings) f(v);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_block([&](const Vec& v) { n += v.size(); });
    return n;
  }

  void check_shapes() const {
    const auto D = static_cast<std::size_t>(hyper.D());
    const auto d = static_cast<std::size_t>(hyper.d);
    if (hyper.d < 1) fail(Errc::ShapeMismatch, "embedding dimension must be positive");
    for (const auto& t : tensors)
      if (t.size() != D * D * d) fail(Errc::ShapeMismatch, "composition tensor has wrong size");
    for (const auto& set : linear)
      for (const auto& w : set)
        if (w.size() != d * D) fail(Errc::ShapeMismatch, "composition matrix has wrong size");
    if (output.size() != kNumClasses * d) fail(Errc::ShapeMismatch, "output matrix has wrong size");
    for (const auto& [word, v] : embeddings)
      if (v.size() != d) fail(Errc::ShapeMismatch, "embedding for '" + word + "' has wrong size");
    if (embeddings.find(kUnknownWord) == embeddings.end())
      fail(Errc::ShapeMismatch, "parameters lack the unknown-word vector");
  }

  bool all_finite() const {
    bool ok = true;
    for_each_block([&](const Vec& v) {
      for (double x : v) ok = ok && std::isfinite(x);
    });
    return ok;
  }
};

/// acc += scale * g, where g may hold a subset of acc's embeddings.
inline void accumulate(TreeLstmParams& acc, const TreeLstmParams& g, double scale = 1.0) {
  auto add = [scale](Vec& a, const Vec& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
  };
  for (int k = 0; k < kNumGates; ++k) {
    add(acc.tensors[k], g.tensors[k]);
    for (int p = 0; p < kNumPairs; ++p) add(acc.linear[k][p], g.linear[k][p]);
  }
  add(acc.output, g.output);
  for (const auto& [word, v] : g.embeddings) {
    auto it = acc.embeddings.find(word);
    if (it == acc.embeddings.end()) it = acc.embeddings.emplace(word, Vec(v.size(), 0.0)).first;
    add(it->second, v);
  }
}

// ---------------------------------------------------------------------------
// Kernels

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Distribution softmax(std::span<const double> z) {
  Distribution p{};
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c) {
    p[c] = std::exp(z[c] - mx);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// S T^k S^T + W^k_{pair} S^T for a full input S of length D.
inline Vec compose(int k, std::span<const double> S, EntityPair pair, const TreeLstmParams& params) {
  const int D = params.hyper.D();
  const int d = params.hyper.d;
  if (k < 0 || k >= kNumGates) fail(Errc::ShapeMismatch, "composition index out of range");
  if (static_cast<int>(S.size()) != D)
    fail(Errc::ShapeMismatch, "composition input has length " + std::to_string(S.size()) + ", expected " +
                                  std::to_string(D));
  const Vec& T = params.tensors[static_cast<std::size_t>(k)];
  const Vec& W = params.linear[static_cast<std::size_t>(k)][static_cast<std::size_t>(pair.index())];
  Vec out(static_cast<std::size_t>(d), 0.0);
  for (int a = 0; a < D; ++a) {
    const double sa = S[static_cast<std::size_t>(a)];
    if (sa == 0.0) continue;
    for (int b = 0; b < D; ++b) {
      const double w = sa * S[static_cast<std::size_t>(b)];
      if (w == 0.0) continue;
      const double* t = &T[(static_cast<std::size_t>(a) * D + b) * d];
      for (int m = 0; m < d; ++m) out[static_cast<std::size_t>(m)] += w * t[m];
    }
  }
  for (int m = 0; m < d; ++m) {
    const double* row = &W[static_cast<std::size_t>(m) * D];
    double acc = 0.0;
    for (int a = 0; a < D; ++a) acc += row[a] * S[static_cast<std::size_t>(a)];
    out[static_cast<std::size_t>(m)] += acc;
  }
  return out;
}

/// Two-argument form: S = [A, B] with |A| = |B| = d + 7.
inline Vec compose(int k, std::span<const double> A, std::span<const double> B, EntityPair pair,
                   const TreeLstmParams& params) {
  const auto half = static_cast<std::size_t>(params.hyper.arg_dim());
  if (A.size() != half || B.size() != half) fail(Errc::ShapeMismatch, "composition arguments must have length d+7");
  Vec S(A.begin(), A.end());
  S.insert(S.end(), B.begin(), B.end());
  return compose(k, S, pair, params);
}

struct NodeState {
  Vec h;
  Vec c;
  Meta meta{};
  Vec o;
  Distribution sentiment{};
};

/// Intermediate values needed by the backward pass.
struct CellCache {
  Vec main_input;   // [l.h, r.meta, r.meta, r.h]
  Vec cross_input;  // [l.c, r.meta, r.c, l.meta]
  std::array<Vec, kNumGates> act;  // post-activation gate values
  Vec tanh_c;
  EntityPair pair;
};

namespace detail {

inline Vec concat_output(const Meta& meta, const Vec& h) {
  Vec o(meta.begin(), meta.end());
  o.insert(o.end(), h.begin(), h.end());
  return o;
}

inline Distribution head(const Vec& h, const TreeLstmParams& params) {
  const int d = params.hyper.d;
  std::array<double, kNumClasses> z{};
  for (int c = 0; c < kNumClasses; ++c) {
    const double* row = &params.output[static_cast<std::size_t>(c) * d];
    double acc = 0.0;
    for (int m = 0; m < d; ++m) acc += row[m] * h[static_cast<std::size_t>(m)];
    z[static_cast<std::size_t>(c)] = acc;
  }
  return softmax(z);
}

}  // namespace detail

/// One cell application at an internal node.
inline NodeState lstm_cell(const NodeState& left, const NodeState& right, const Meta& node_meta,
                           const TreeLstmParams& params, CellCache* cache = nullptr) {
  const auto d = static_cast<std::size_t>(params.hyper.d);
  if (left.h.size() != d || right.h.size() != d || left.c.size() != d || right.c.size() != d ||
      right.o.size() != d + kMetaDim)
    fail(Errc::ShapeMismatch, "child state dimension does not match parameters");
  const EntityPair pair{left.meta[kMetaDim - 1] != 0.0, right.meta[kMetaDim - 1] != 0.0};

  Vec main_input;
  main_input.reserve(2 * d + 2 * kMetaDim);
  main_input.insert(main_input.end(), left.h.begin(), left.h.end());
  main_input.insert(main_input.end(), right.meta.begin(), right.meta.end());
  main_input.insert(main_input.end(), right.o.begin(), right.o.end());

  Vec cross_input;
  cross_input.reserve(2 * d + 2 * kMetaDim);
  cross_input.insert(cross_input.end(), left.c.begin(), left.c.end());
  cross_input.insert(cross_input.end(), right.meta.begin(), right.meta.end());
  cross_input.insert(cross_input.end(), right.c.begin(), right.c.end());
  cross_input.insert(cross_input.end(), left.meta.begin(), left.meta.end());

  std::array<Vec, kNumGates> act;
  for (int k = 0; k < kNumGates; ++k) {
    const bool cross = k == static_cast<int>(Gate::CrossInput) || k == static_cast<int>(Gate::CrossCandidate);
    Vec z = compose(k, cross ? cross_input : main_input, pair, params);
    const bool tanh_gate = k == static_cast<int>(Gate::Candidate) || k == static_cast<int>(Gate::CrossCandidate);
    for (double& v : z) v = tanh_gate ? std::tanh(v) : sigmoid(v);
    act[static_cast<std::size_t>(k)] = std::move(z);
  }
  const Vec& f = act[0];
  const Vec& in = act[1];
  const Vec& cand = act[2];
  const Vec& xin = act[3];
  const Vec& xcand = act[4];
  const Vec& g = act[5];

  NodeState out;
  out.c.resize(d);
  out.h.resize(d);
  Vec tanh_c(d);
  for (std::size_t m = 0; m < d; ++m) {
    out.c[m] = right.c[m] * f[m] + cand[m] * in[m] + xin[m] * xcand[m];
    tanh_c[m] = std::tanh(out.c[m]);
    out.h[m] = g[m] * tanh_c[m];
  }
  out.meta = node_meta;
  out.o = detail::concat_output(node_meta, out.h);
  out.sentiment = detail::head(out.h, params);

  if (cache) {
    cache->main_input = std::move(main_input);
    cache->cross_input = std::move(cross_input);
    cache->act = std::move(act);
    cache->tanh_c = std::move(tanh_c);
    cache->pair = pair;
  }
  return out;
}

inline NodeState leaf_state(const TreeNode& node, const TreeLstmParams& params) {
  NodeState s;
  s.h = params.embedding(node.token);
  if (s.h.size() != static_cast<std::size_t>(params.hyper.d))
    fail(Errc::ShapeMismatch, "embedding dimension does not match parameters");
  s.c.assign(s.h.size(), 0.0);
  s.meta = encode_metadata(node.category, node.entity, params.categories);
  s.o = detail::concat_output(s.meta, s.h);
  s.sentiment = detail::head(s.h, params);
  return s;
}

/// Per-node states for a tree, in the tree's post-order node order.
struct Annotated {
  std::vector<NodeState> states;
  std::vector<CellCache> caches;  // same indexing as states; empty for leaves

  const NodeState& root() const { return states.back(); }
};

/// Bottom-up evaluation; every node gets a state and a sentiment.
inline Annotated forward(const ParseTree& tree, const TreeLstmParams& params) {
  Annotated a;
  a.states.resize(tree.size());
  a.caches.resize(tree.size());
  for (std::size_t i = 0; i < tree.size(); ++i) {
    const TreeNode& node = tree.node(i);
    if (node.is_leaf()) {
      a.states[i] = leaf_state(node, params);
    } else {
      Meta meta = encode_metadata(node.category, node.entity, params.categories);
      a.states[i] = lstm_cell(a.states[static_cast<std::size_t>(node.left)],
                              a.states[static_cast<std::size_t>(node.right)], meta, params, &a.caches[i]);
    }
  }
  return a;
}

inline Distribution predict(const ParseTree& tree, const TreeLstmParams& params) {
  return forward(tree, params).root().sentiment;
}

enum class Supervision { RootOnly, AllLabeledNodes };

inline std::vector<std::size_t> supervised_nodes(const ParseTree& tree, Supervision mode) {
  std::vector<std::size_t> nodes;
  if (tree.empty()) return nodes;
  if (mode == Supervision::RootOnly) {
    if (tree.root().label) nodes.push_back(tree.size() - 1);
  } else {
    for (std::size_t i = 0; i < tree.size(); ++i)
      if (tree.node(i).label) nodes.push_back(i);
  }
  return nodes;
}

/// Mean cross-entropy of node sentiments against gold labels.
inline double loss(const ParseTree& tree, const Annotated& annotated, Supervision mode = Supervision::AllLabeledNodes) {
  auto nodes = supervised_nodes(tree, mode);
  if (nodes.empty()) fail(Errc::NoLabeledNodes, "tree has no labeled nodes for this supervision mode");
  double total = 0.0;
  for (std::size_t i : nodes) {
    const double p = annotated.states[i].sentiment[static_cast<std::size_t>(*tree.node(i).label)];
    total -= std::log(std::max(p, std::numeric_limits<double>::min()));
  }
  return total / static_cast<double>(nodes.size());
}

/// Exact gradient of loss() with respect to every parameter. Embedding
/// gradients are present for the words the tree reads (unknown words
/// accumulate into the reserved vector).
inline TreeLstmParams backward(const ParseTree& tree, const Annotated& annotated, const TreeLstmParams& params,
                               Supervision mode = Supervision::AllLabeledNodes) {
  const int d = params.hyper.d;
  const int D = params.hyper.D();
  const auto du = static_cast<std::size_t>(d);
  TreeLstmParams grad = params.zeros_like();

  auto nodes = supervised_nodes(tree, mode);
  if (nodes.empty()) fail(Errc::NoLabeledNodes, "tree has no labeled nodes for this supervision mode");
  const double scale = 1.0 / static_cast<double>(nodes.size());

  std::vector<Vec> dh(tree.size(), Vec(du, 0.0));
  std::vector<Vec> dc(tree.size(), Vec(du, 0.0));

  for (std::size_t i : nodes) {
    const auto& s = annotated.states[i];
    const int y = *tree.node(i).label;
    for (int c = 0; c < kNumClasses; ++c) {
      const double dz = scale * (s.sentiment[static_cast<std::size_t>(c)] - (c == y ? 1.0 : 0.0));
      double* wrow = &grad.output[static_cast<std::size_t>(c) * du];
      const double* prow = &params.output[static_cast<std::size_t>(c) * du];
      for (std::size_t m = 0; m < du; ++m) {
        wrow[m] += dz * s.h[m];
        dh[i][m] += dz * prow[m];
      }
    }
  }

  // Accumulates dS for one composition and its parameter gradients.
  auto compose_backward = [&](int k, const Vec& S, EntityPair pair, const Vec& dz, Vec& dS) {
    const Vec& T = params.tensors[static_cast<std::size_t>(k)];
    const Vec& W = params.linear[static_cast<std::size_t>(k)][static_cast<std::size_t>(pair.index())];
    Vec& gT = grad.tensors[static_cast<std::size_t>(k)];
    Vec& gW = grad.linear[static_cast<std::size_t>(k)][static_cast<std::size_t>(pair.index())];
    for (int a = 0; a < D; ++a) {
      const double sa = S[static_cast<std::size_t>(a)];
      for (int b = 0; b < D; ++b) {
        const double sb = S[static_cast<std::size_t>(b)];
        const std::size_t base = (static_cast<std::size_t>(a) * D + b) * du;
        const double* t = &T[base];
        double* gt = &gT[base];
        double contraction = 0.0;  // sum_m dz[m] T[a][b][m]
        const double w = sa * sb;
        for (int m = 0; m < d; ++m) {
          gt[m] += dz[static_cast<std::size_t>(m)] * w;
          contraction += dz[static_cast<std::size_t>(m)] * t[m];
        }
        dS[static_cast<std::size_t>(a)] += contraction * sb;
        dS[static_cast<std::size_t>(b)] += contraction * sa;
      }
    }
    for (int m = 0; m < d; ++m) {
      const double g = dz[static_cast<std::size_t>(m)];
      const double* row = &W[static_cast<std::size_t>(m) * D];
      double* grow = &gW[static_cast<std::size_t>(m) * D];
      for (int a = 0; a < D; ++a) {
        grow[a] += g * S[static_cast<std::size_t>(a)];
        dS[static_cast<std::size_t>(a)] += g * row[a];
      }
    }
  };

  for (std::size_t ii = tree.size(); ii-- > 0;) {
    const TreeNode& node = tree.node(ii);
    if (node.is_leaf()) {
      auto it = params.embeddings.find(node.token);
      const std::string& key = it == params.embeddings.end() ? std::string(kUnknownWord) : it->first;
      auto [git, inserted] = grad.embeddings.try_emplace(key, Vec(du, 0.0));
      for (std::size_t m = 0; m < du; ++m) git->second[m] += dh[ii][m];
      continue;
    }
    const auto l = static_cast<std::size_t>(node.left);
    const auto r = static_cast<std::size_t>(node.right);
    const CellCache& cc = annotated.caches[ii];
    const NodeState& rs = annotated.states[r];
    const Vec& f = cc.act[0];
    const Vec& in = cc.act[1];
    const Vec& cand = cc.act[2];
    const Vec& xin = cc.act[3];
    const Vec& xcand = cc.act[4];
    const Vec& g = cc.act[5];

    std::array<Vec, kNumGates> dz;
    for (auto& v : dz) v.assign(du, 0.0);
    for (std::size_t m = 0; m < du; ++m) {
      const double th = cc.tanh_c[m];
      const double dg = dh[ii][m] * th;
      const double dC = dc[ii][m] + dh[ii][m] * g[m] * (1.0 - th * th);
      dc[r][m] += dC * f[m];
      dz[0][m] = dC * rs.c[m] * f[m] * (1.0 - f[m]);
      dz[1][m] = dC * cand[m] * in[m] * (1.0 - in[m]);
      dz[2][m] = dC * in[m] * (1.0 - cand[m] * cand[m]);
      dz[3][m] = dC * xcand[m] * xin[m] * (1.0 - xin[m]);
      dz[4][m] = dC * xin[m] * (1.0 - xcand[m] * xcand[m]);
      dz[5][m] = dg * g[m] * (1.0 - g[m]);
    }

    Vec dmain(static_cast<std::size_t>(D), 0.0);
    Vec dcross(static_cast<std::size_t>(D), 0.0);
    for (int k = 0; k < kNumGates; ++k) {
      const bool cross = k == 3 || k == 4;
      compose_backward(k, cross ? cc.cross_input : cc.main_input, cc.pair, dz[static_cast<std::size_t>(k)],
                       cross ? dcross : dmain);
    }
    // main = [l.h (d), r.meta (7), r.meta (7), r.h (d)]
    // cross = [l.c (d), r.meta (7), r.c (d), l.meta (7)]
    for (std::size_t m = 0; m < du; ++m) {
      dh[l][m] += dmain[m];
      dh[r][m] += dmain[du + 2 * kMetaDim + m];
      dc[l][m] += dcross[m];
      dc[r][m] += dcross[du + kMetaDim + m];
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Embedding and model files

/// Text embeddings: optional `count dim` header, then `word v1 ... vd`.
inline std::map<std::string, Vec, std::less<>> read_embeddings(std::istream& in, int d) {
  std::map<std::string, Vec, std::less<>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto fields = io::split_ws(line);
    if (fields.empty()) continue;
    if (line_no == 1 && fields.size() == 2) {
      bool header = true;
      for (auto f : fields)
        for (char c : f) header = header && c >= '0' && c <= '9';
      if (header) {
        long long dim = io::parse_int(fields[1]);
        if (dim != d)
          fail(Errc::EmbeddingDimMismatch,
               "embedding file declares dimension " + std::to_string(dim) + ", model uses " + std::to_string(d));
        continue;
      }
    }
    if (static_cast<int>(fields.size()) - 1 != d)
      fail(Errc::EmbeddingDimMismatch, "line " + std::to_string(line_no) + " has " +
                                           std::to_string(fields.size() - 1) + " values, expected " +
                                           std::to_string(d));
    Vec v;
    v.reserve(static_cast<std::size_t>(d));
    for (std::size_t k = 1; k < fields.size(); ++k) v.push_back(io::parse_double(fields[k], "embedding value"));
    out[std::string(fields[0])] = std::move(v);
  }
  return out;
}

inline std::map<std::string, Vec, std::less<>> load_embeddings(const std::filesystem::path& path, int d) {
  std::istringstream in(io::read_file(path));
  return read_embeddings(in, d);
}

inline constexpr int kModelVersion = 1;

inline nlohmann::json to_json(const TreeLstmParams& p) {
  using nlohmann::json;
  json j;
  j["format"] = "sentitree-tree-lstm";
  j["version"] = kModelVersion;
  j["d"] = p.hyper.d;
  j["D"] = p.hyper.D();
  j["classes"] = kNumClasses;
  j["categories"] = p.categories.names();
  json tensors = json::array();
  json linear = json::array();
  for (int k = 0; k < kNumGates; ++k) {
    tensors.push_back({{"shape", {p.hyper.D(), p.hyper.D(), p.hyper.d}}, {"values", p.tensors[k]}});
    json set = json::array();
    for (int q = 0; q < kNumPairs; ++q)
      set.push_back({{"shape", {p.hyper.d, p.hyper.D()}}, {"values", p.linear[k][q]}});
    linear.push_back(std::move(set));
  }
  j["tensors"] = std::move(tensors);
  j["linear"] = std::move(linear);
  j["output"] = {{"shape", {kNumClasses, p.hyper.d}}, {"values", p.output}};
  json emb = json::object();
  for (const auto& [w, v] : p.embeddings) emb[w] = v;
  j["embeddings"] = std::move(emb);
  return j;
}

inline TreeLstmParams params_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "sentitree-tree-lstm") fail(Errc::FormatError, "not a tree-LSTM model");
    if (j.at("version").get<int>() != kModelVersion)
      fail(Errc::FormatError, "unsupported model version " + std::to_string(j.at("version").get<int>()));
    Hyper hyper{j.at("d").get<int>()};
    if (hyper.d < 1) fail(Errc::ShapeMismatch, "embedding dimension must be positive");
    TreeLstmParams p = TreeLstmParams::zeros(hyper, CategoryTable(j.at("categories").get<std::vector<std::string>>()));
    p.embeddings.clear();
    for (int k = 0; k < kNumGates; ++k) {
      p.tensors[k] = j.at("tensors").at(k).at("values").get<Vec>();
      for (int q = 0; q < kNumPairs; ++q) p.linear[k][q] = j.at("linear").at(k).at(q).at("values").get<Vec>();
    }
    p.output = j.at("output").at("values").get<Vec>();
    for (const auto& [w, v] : j.at("embeddings").items()) p.embeddings[w] = v.get<Vec>();
    p.check_shapes();
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::FormatError, std::string("malformed model file: ") + e.what());
  }
}

inline void save_params(const std::filesystem::path& path, const TreeLstmParams& p) {
  if (!p.all_finite()) fail(Errc::NumericFailure, "refusing to save non-finite parameters");
  io::atomic_write(path, to_json(p).dump() + "\n");
}

inline TreeLstmParams load_params(const std::filesystem::path& path) {
  try {
    return params_from_json(nlohmann::json::parse(io::read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::FormatError, std::string("cannot parse model file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training

struct TrainSchedule {
  int epochs = 100;
  std::size_t batch_size = 4;
  double learning_rate = 0.05;
  double l2 = 0.0;
  double adagrad_epsilon = 1e-8;
  std::uint64_t seed = 0;
  Supervision supervision = Supervision::AllLabeledNodes;
  unsigned threads = 1;
  std::optional<double> init_range;
  /// Stop early once training node accuracy reaches this value.
  std::optional<double> target_accuracy;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_accuracy = 0.0;
};

struct TrainResult {
  TreeLstmParams params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

/// Thread count from SENTITREE_THREADS, defaulting to 1.
inline unsigned threads_from_env() {
  if (const char* s = std::getenv("SENTITREE_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(s, &end, 10);
    if (end != s && v > 0) return static_cast<unsigned>(std::min<long>(v, 256));
  }
  return 1;
}

/// Fraction of supervised nodes whose argmax matches the gold label.
inline double node_accuracy(const Treebank& bank, const TreeLstmParams& params,
                            Supervision mode = Supervision::AllLabeledNodes) {
  std::size_t correct = 0, total = 0;
  for (const auto& tree : bank.trees) {
    auto a = forward(tree, params);
    for (std::size_t i : supervised_nodes(tree, mode)) {
      const auto& p = a.states[i].sentiment;
      int arg = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
      correct += arg == *tree.node(i).label;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

inline double mean_loss(const Treebank& bank, const TreeLstmParams& params, Supervision mode) {
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& tree : bank.trees) {
    if (supervised_nodes(tree, mode).empty()) continue;
    total += loss(tree, forward(tree, params), mode);
    ++n;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

inline std::vector<std::string> vocabulary(const Treebank& bank) {
  std::map<std::string, int> seen;
  for (const auto& t : bank.trees)
    for (const auto& n : t.nodes())
      if (n.is_leaf()) seen.emplace(n.token, 0);
  std::vector<std::string> out;
  for (auto& [w, _] : seen) out.push_back(w);
  return out;
}

/// Categories in first-appearance order, capped at the code capacity.
inline CategoryTable categories_of(const Treebank& bank) {
  std::vector<std::string> names;
  std::map<std::string, int> seen;
  for (const auto& t : bank.trees)
    for (const auto& n : t.nodes())
      if (seen.emplace(n.category, 0).second) names.push_back(n.category);
  return CategoryTable(std::move(names));
}

/// Minibatch AdaGrad over shuffled trees. Per-tree gradients within a batch
/// may run on several threads but are reduced in tree order, so results do
/// not depend on the thread count. Returns the parameters with the lowest
/// validation loss (the training bank when no validation bank is given).
inline TrainResult train(const Treebank& bank, Hyper hyper, const TrainSchedule& schedule,
                         std::optional<CategoryTable> categories = std::nullopt,
                         const std::map<std::string, Vec, std::less<>>* pretrained = nullptr,
                         const Treebank* validation = nullptr) {
  if (bank.trees.empty()) fail(Errc::EmptyInput, "training treebank is empty");
  for (std::size_t t = 0; t < bank.trees.size(); ++t)
    if (supervised_nodes(bank.trees[t], schedule.supervision).empty())
      fail(Errc::NoLabeledNodes, "tree " + std::to_string(t) + " has no labels for the supervision mode");
  if (pretrained)
    for (const auto& [w, v] : *pretrained)
      if (static_cast<int>(v.size()) != hyper.d)
        fail(Errc::EmbeddingDimMismatch, "pre-trained vector for '" + w + "' has dimension " +
                                             std::to_string(v.size()) + ", model uses " + std::to_string(hyper.d));

  auto vocab = vocabulary(bank);
  TreeLstmParams params = TreeLstmParams::random(hyper, categories ? std::move(*categories) : categories_of(bank),
                                                 vocab, derive_seed(schedule.seed, 1), schedule.init_range);
  if (pretrained)
    for (const auto& [w, v] : *pretrained)
      if (auto it = params.embeddings.find(w); it != params.embeddings.end()) it->second = v;

  TreeLstmParams history = params.zeros_like();
  for (auto& [w, v] : params.embeddings) history.embeddings[w] = Vec(v.size(), 0.0);

  const Treebank& val = validation ? *validation : bank;
  TrainResult result{params, {}, 0};
  double best = mean_loss(val, params, schedule.supervision);
  if (!std::isfinite(best)) fail(Errc::NumericFailure, "initial loss is not finite");

  Rng rng(derive_seed(schedule.seed, 2));
  std::vector<std::size_t> order(bank.trees.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t batch = std::max<std::size_t>(1, schedule.batch_size);
  const unsigned threads = std::max(1u, schedule.threads);

  for (int epoch = 1; epoch <= schedule.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const std::size_t n = end - start;
      std::vector<TreeLstmParams> grads(n);
      std::vector<double> losses(n, 0.0);
      auto work = [&](std::size_t j) {
        const ParseTree& tree = bank.trees[order[start + j]];
        auto a = forward(tree, params);
        losses[j] = loss(tree, a, schedule.supervision);
        grads[j] = backward(tree, a, params, schedule.supervision);
      };
      if (threads > 1 && n > 1) {
        std::vector<std::thread> pool;
        const unsigned nt = std::min<unsigned>(threads, static_cast<unsigned>(n));
        for (unsigned t = 0; t < nt; ++t)
          pool.emplace_back([&, t] {
            for (std::size_t j = t; j < n; j += nt) work(j);
          });
        for (auto& th : pool) th.join();
      } else {
        for (std::size_t j = 0; j < n; ++j) work(j);
      }
      TreeLstmParams total = params.zeros_like();
      for (std::size_t j = 0; j < n; ++j) {
        accumulate(total, grads[j], 1.0 / static_cast<double>(n));
        epoch_loss += losses[j];
      }
      if (schedule.l2 > 0.0) {
        for (int k = 0; k < kNumGates; ++k) {
          for (std::size_t q = 0; q < total.tensors[k].size(); ++q)
            total.tensors[k][q] += schedule.l2 * params.tensors[k][q];
          for (int p = 0; p < kNumPairs; ++p)
            for (std::size_t q = 0; q < total.linear[k][p].size(); ++q)
              total.linear[k][p][q] += schedule.l2 * params.linear[k][p][q];
        }
        for (std::size_t q = 0; q < total.output.size(); ++q) total.output[q] += schedule.l2 * params.output[q];
      }
      auto step = [&](Vec& theta, Vec& acc, const Vec& g) {
        for (std::size_t q = 0; q < theta.size(); ++q) {
          acc[q] += g[q] * g[q];
          theta[q] -= schedule.learning_rate * g[q] / (std::sqrt(acc[q]) + schedule.adagrad_epsilon);
        }
      };
      for (int k = 0; k < kNumGates; ++k) {
        step(params.tensors[k], history.tensors[k], total.tensors[k]);
        for (int p = 0; p < kNumPairs; ++p) step(params.linear[k][p], history.linear[k][p], total.linear[k][p]);
      }
      step(params.output, history.output, total.output);
      for (const auto& [w, g] : total.embeddings) step(params.embeddings.find(w)->second, history.embeddings[w], g);
    }
    if (!params.all_finite()) fail(Errc::NumericFailure, "training diverged at epoch " + std::to_string(epoch));

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(order.size());
    rec.validation_loss = mean_loss(val, params, schedule.supervision);
    rec.validation_accuracy = node_accuracy(val, params, schedule.supervision);
    result.history.push_back(rec);
    if (rec.validation_loss < best) {
      best = rec.validation_loss;
      result.params = params;
      result.best_epoch = epoch;
    }
    if (schedule.target_accuracy && node_accuracy(bank, params, schedule.supervision) >= *schedule.target_accuracy)
      break;
  }
  return result;
}

}  // namespace sentitree::neural
