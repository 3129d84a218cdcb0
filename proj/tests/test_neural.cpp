#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "sentitree/gradcheck.hpp"
#include "sentitree/neural.hpp"
#include "sentitree/rng.hpp"
#include "sentitree/treebank.hpp"

using namespace sentitree;
using namespace sentitree::neural;

namespace {

const char* kAmobee = "(3#S#1 (2#NNP#1 amobee) (4#VP#0 (2#VBZ#0 is) (4#JJ#0 awesome)))";

std::vector<double> flatten(const TreeLstmParams& p) {
  std::vector<double> out;
  p.for_each_block([&](const Vec& v) { out.insert(out.end(), v.begin(), v.end()); });
  return out;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

bool same_params(const TreeLstmParams& a, const TreeLstmParams& b) {
  if (!(a.hyper == b.hyper) || !(a.categories == b.categories)) return false;
  std::vector<std::string> wa, wb;
  for (const auto& [w, v] : a.embeddings) wa.push_back(w);
  for (const auto& [w, v] : b.embeddings) wb.push_back(w);
  return wa == wb && bit_equal(flatten(a), flatten(b));
}

TreeLstmParams random_params(int d, std::uint64_t seed, double range = 0.5) {
  const std::vector<std::string> vocab{"amobee", "is", "awesome"};
  return TreeLstmParams::random(Hyper{d}, CategoryTable({"NN", "S", "VP", "JJ"}), vocab, seed, range);
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

using oracle::scalar_compose;

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Child {
  std::vector<double> h, c, meta;
};

// Scalar cell used as the oracle for lstm_cell.
Child scalar_cell(const Child& l, const Child& r, const std::vector<double>& meta, const TreeLstmParams& p) {
  const int d = p.hyper.d;
  std::vector<double> x1, x2;
  for (double v : l.h) x1.push_back(v);
  for (double v : r.meta) x1.push_back(v);
  for (double v : r.meta) x1.push_back(v);
  for (double v : r.h) x1.push_back(v);
  for (double v : l.c) x2.push_back(v);
  for (double v : r.meta) x2.push_back(v);
  for (double v : r.c) x2.push_back(v);
  for (double v : l.meta) x2.push_back(v);
  const int pair = 2 * (l.meta[6] != 0) + (r.meta[6] != 0);
  auto f = scalar_compose(x1, p, 0, pair);
  auto i = scalar_compose(x1, p, 1, pair);
  auto cp = scalar_compose(x1, p, 2, pair);
  auto i2 = scalar_compose(x2, p, 3, pair);
  auto c2 = scalar_compose(x2, p, 4, pair);
  auto g = scalar_compose(x1, p, 5, pair);
  Child out{std::vector<double>(d), std::vector<double>(d), meta};
  for (int m = 0; m < d; ++m) {
    out.c[m] = r.c[m] * sig(f[m]) + std::tanh(cp[m]) * sig(i[m]) + sig(i2[m]) * std::tanh(c2[m]);
    out.h[m] = sig(g[m]) * std::tanh(out.c[m]);
  }
  return out;
}

NodeState to_state(const Child& c) {
  NodeState s;
  s.h = c.h;
  s.c = c.c;
  for (int i = 0; i < kMetaDim; ++i) s.meta[i] = c.meta[i];
  s.o = c.meta;
  s.o.insert(s.o.end(), c.h.begin(), c.h.end());
  return s;
}

Treebank toy_bank() { return load_treebank(std::filesystem::path(SENTITREE_DATA_DIR) / "toy_treebank.txt"); }

}  // namespace

TEST(EncodeMetadata, Examples) {
  const CategoryTable table({"NN", "S"});
  EXPECT_EQ(encode_metadata("NN", false, table), (Meta{0, 0, 0, 0, 0, 1, 0}));
  EXPECT_EQ(encode_metadata("ZZZ", true, table), (Meta{0, 0, 0, 0, 0, 0, 1}));
  EXPECT_EQ(encode_metadata("S", true, table), (Meta{0, 0, 0, 0, 1, 0, 1}));
}

TEST(EncodeMetadata, OverflowCategoriesGetZeroCode) {
  std::vector<std::string> names;
  for (int i = 0; i < 70; ++i) names.push_back("C" + std::to_string(i));
  const CategoryTable table(names);
  EXPECT_EQ(table.code("C62"), 63);
  EXPECT_EQ(table.code("C63"), 0);
  EXPECT_EQ(encode_metadata("C69", false, table), Meta{});
}

TEST(Hyper, Dimensions) {
  EXPECT_EQ(Hyper{25}.D(), 64);
  EXPECT_EQ(Hyper{1}.D(), 16);
  const auto p = random_params(3, 1);
  EXPECT_EQ(p.tensors[0].size(), 20u * 20u * 3u);
  EXPECT_EQ(p.linear[5][3].size(), 3u * 20u);
  EXPECT_EQ(p.output.size(), 15u);
  EXPECT_TRUE(p.knows(kUnknownWord));
}

TEST(Compose, ZeroInputGivesZero) {
  const auto p = random_params(2, 3);
  const std::vector<double> S(static_cast<std::size_t>(p.hyper.D()), 0.0);
  for (int k = 0; k < kNumGates; ++k) EXPECT_EQ(compose(k, S, EntityPair{true, false}, p), Vec(2, 0.0));
}

TEST(Compose, LinearOnlyReducesToMatrixProduct) {
  auto p = TreeLstmParams::zeros(Hyper{2}, CategoryTable());
  const int D = p.hyper.D();
  std::fill(p.linear[0][0].begin(), p.linear[0][0].end(), 1.0);
  std::vector<double> S(D, 0.0);
  S[5] = 3.0;
  EXPECT_EQ(compose(0, S, EntityPair{}, p), (Vec{3.0, 3.0}));
}

TEST(Compose, RejectsWrongLength) {
  const auto p = random_params(2, 3);
  EXPECT_THROW(compose(0, Vec(5, 0.0), EntityPair{}, p), Error);
  EXPECT_THROW(compose(0, Vec(9, 0.0), Vec(8, 0.0), EntityPair{}, p), Error);
  EXPECT_THROW(compose(6, Vec(18, 0.0), EntityPair{}, p), Error);
}

TEST(Compose, MatchesScalarOracleSeed42) {
  const auto p = random_params(1, 42);
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const auto A = random_vec(rng, 8), B = random_vec(rng, 8);
    std::vector<double> S = A;
    S.insert(S.end(), B.begin(), B.end());
    const EntityPair pair{rng.coin(), rng.coin()};
    for (int k = 0; k < kNumGates; ++k) {
      const auto got = compose(k, A, B, pair, p);
      const auto want = scalar_compose(S, p, k, pair.index());
      ASSERT_EQ(got.size(), 1u);
      EXPECT_NEAR(got[0], want[0], 1e-12);
    }
  }
}

TEST(Compose, IndicatorExclusivity) {
  Rng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto p = random_params(1 + static_cast<int>(rng.below(3)), 100 + trial);
    const auto S = random_vec(rng, static_cast<std::size_t>(p.hyper.D()));
    const EntityPair pair{rng.coin(), rng.coin()};
    const int k = static_cast<int>(rng.below(kNumGates));
    const auto full = compose(k, S, pair, p);
    for (int q = 0; q < kNumPairs; ++q)
      if (q != pair.index()) std::fill(p.linear[k][q].begin(), p.linear[k][q].end(), 0.0);
    EXPECT_EQ(compose(k, S, pair, p), full);
  }
}

TEST(LstmCell, ZeroParams) {
  const auto p = TreeLstmParams::zeros(Hyper{3}, CategoryTable({"NN"}));
  Rng rng(4);
  Child l{random_vec(rng, 3), random_vec(rng, 3), {0, 0, 0, 0, 0, 1, 1}};
  Child r{random_vec(rng, 3), random_vec(rng, 3), {0, 0, 0, 0, 0, 1, 0}};
  const Meta meta{0, 0, 0, 0, 1, 0, 1};
  const NodeState out = lstm_cell(to_state(l), to_state(r), meta, p);
  for (int m = 0; m < 3; ++m) {
    EXPECT_DOUBLE_EQ(out.c[m], 0.5 * r.c[m]);
    EXPECT_DOUBLE_EQ(out.h[m], 0.5 * std::tanh(0.5 * r.c[m]));
  }
  for (double v : out.sentiment) EXPECT_DOUBLE_EQ(v, 0.2);
  EXPECT_EQ(out.meta, meta);

  r.c.assign(3, 0.0);
  const NodeState zero = lstm_cell(to_state(l), to_state(r), meta, p);
  EXPECT_EQ(zero.c, Vec(3, 0.0));
  EXPECT_EQ(zero.h, Vec(3, 0.0));
  EXPECT_EQ(zero.o, (Vec{0, 0, 0, 0, 1, 0, 1, 0, 0, 0}));
}

TEST(LstmCell, MatchesScalarOracleSeed47) {
  const auto p = random_params(2, 47);
  Rng rng(47);
  for (int trial = 0; trial < 20; ++trial) {
    Child l{random_vec(rng, 2), random_vec(rng, 2), {0, 0, 0, 0, 1, 1, static_cast<double>(rng.coin())}};
    Child r{random_vec(rng, 2), random_vec(rng, 2), {0, 0, 0, 0, 0, 1, static_cast<double>(rng.coin())}};
    const std::vector<double> meta{0, 0, 0, 0, 1, 0, 1};
    const Child want = scalar_cell(l, r, meta, p);
    Meta m{};
    for (int i = 0; i < kMetaDim; ++i) m[i] = meta[i];
    const NodeState got = lstm_cell(to_state(l), to_state(r), m, p);
    for (int i = 0; i < 2; ++i) {
      EXPECT_NEAR(got.c[i], want.c[i], 1e-12);
      EXPECT_NEAR(got.h[i], want.h[i], 1e-12);
    }
    ASSERT_EQ(got.o.size(), 9u);
    for (int i = 0; i < 7; ++i) EXPECT_EQ(got.o[i], meta[i]);
    EXPECT_EQ(got.o[7], got.h[0]);
    EXPECT_EQ(got.o[8], got.h[1]);
    double z[5], mx = -1e300, sum = 0;
    for (int c = 0; c < 5; ++c) {
      z[c] = p.output[c * 2] * want.h[0] + p.output[c * 2 + 1] * want.h[1];
      mx = std::max(mx, z[c]);
    }
    for (double& v : z) sum += (v = std::exp(v - mx));
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(got.sentiment[c], z[c] / sum, 1e-12);
  }
}

TEST(LstmCell, RejectsMismatchedChildren) {
  const auto p = random_params(2, 1);
  NodeState bad;
  bad.h = Vec(3, 0.0);
  bad.c = Vec(3, 0.0);
  bad.o = Vec(10, 0.0);
  EXPECT_THROW(lstm_cell(bad, bad, Meta{}, p), Error);
}

TEST(Forward, SingleLeaf) {
  const auto p = random_params(3, 5);
  const ParseTree t = ParseTree::leaf("amobee", "NN", 2);
  const auto& e = p.embedding("amobee");
  double z[5], sum = 0;
  for (int c = 0; c < 5; ++c) {
    z[c] = 0;
    for (int m = 0; m < 3; ++m) z[c] += p.output[c * 3 + m] * e[m];
    sum += std::exp(z[c]);
  }
  const auto got = predict(t, p);
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(got[c], std::exp(z[c]) / sum, 1e-15);
}

TEST(Forward, UnknownWordUsesReservedVector) {
  const auto p = random_params(2, 8);
  EXPECT_EQ(predict(ParseTree::leaf("zebra", "NN"), p), predict(ParseTree::leaf(std::string(kUnknownWord), "NN"), p));
}

TEST(Forward, FigureTwoTreeUsesTwoCells) {
  const ParseTree t = parse_ptb(kAmobee);
  const auto p = random_params(2, 11);
  const Annotated a = forward(t, p);
  std::size_t cells = 0;
  for (std::size_t i = 0; i < t.size(); ++i) cells += !a.caches[i].main_input.empty();
  EXPECT_EQ(cells, 2u);
  // Post-order: amobee, is, awesome, VP, S.
  ASSERT_EQ(t.node(3).category, "VP");
  const auto vp = lstm_cell(a.states[1], a.states[2], encode_metadata("VP", false, p.categories), p);
  EXPECT_EQ(a.states[3].h, vp.h);
  const auto s = lstm_cell(a.states[0], a.states[3], encode_metadata("S", true, p.categories), p);
  EXPECT_EQ(a.root().h, s.h);
  EXPECT_EQ(a.caches[4].pair.index(), (EntityPair{true, false}.index()));
}

TEST(Forward, ZeroParamsGiveUniformEverywhere) {
  const auto p = TreeLstmParams::zeros(Hyper{4}, CategoryTable::penn());
  const Annotated a = forward(parse_ptb(kAmobee), p);
  for (const auto& st : a.states)
    for (double v : st.sentiment) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(Forward, SoftmaxValidAndDeterministic) {
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    auto inst = random_instance(500 + i, 1 + static_cast<int>(rng.below(4)), 8, 0.0, 3.0);
    const Annotated a = forward(inst.tree, inst.params);
    const Annotated b = forward(inst.tree, inst.params);
    for (std::size_t n = 0; n < a.states.size(); ++n) {
      double sum = 0;
      for (double v : a.states[n].sentiment) {
        EXPECT_GT(v, 0.0);
        sum += v;
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      EXPECT_TRUE(bit_equal(a.states[n].h, b.states[n].h));
      EXPECT_TRUE(bit_equal(a.states[n].c, b.states[n].c));
      EXPECT_EQ(std::memcmp(a.states[n].sentiment.data(), b.states[n].sentiment.data(), sizeof(Distribution)), 0);
    }
  }
}

TEST(Forward, EntitySensitivityAtEveryAncestor) {
  Rng rng(33);
  const std::vector<std::string> words{"a", "b", "c"};
  const std::vector<std::string> cats{"NN", "S"};
  const auto p = random_params(2, 2);
  for (int trial = 0; trial < 50; ++trial) {
    const ParseTree plain = random_tree(rng, 2 + static_cast<int>(rng.below(6)), words, cats, 0.0, 0.5);
    const Annotated before = forward(plain, p);
    std::vector<std::size_t> leaves;
    for (std::size_t i = 0; i < plain.size(); ++i)
      if (plain.node(i).is_leaf()) leaves.push_back(i);
    const std::size_t flip = leaves[rng.below(leaves.size())];

    ParseTree flipped = plain;
    flipped.node(flip).entity = true;
    std::vector<bool> ancestor(plain.size(), false);
    ancestor[flip] = true;
    for (std::size_t i = 0; i < flipped.size(); ++i) {
      auto& n = flipped.node(i);
      if (n.is_leaf()) continue;
      ancestor[i] = ancestor[n.left] || ancestor[n.right];
      n.entity = flipped.node(n.left).entity || flipped.node(n.right).entity;
    }
    ASSERT_TRUE(validate(flipped).empty());
    const Annotated after = forward(flipped, p);
    for (std::size_t i = 0; i < plain.size(); ++i) {
      if (plain.node(i).is_leaf()) continue;
      EXPECT_EQ(before.caches[i].pair.index(), 0);
      if (ancestor[i])
        EXPECT_NE(after.caches[i].pair.index(), before.caches[i].pair.index());
      else
        EXPECT_EQ(after.caches[i].pair.index(), 0);
    }
  }
}

TEST(Loss, UniformPredictionsGiveLn5) {
  const auto p = TreeLstmParams::zeros(Hyper{2}, CategoryTable());
  const ParseTree t = parse_ptb(kAmobee);
  EXPECT_NEAR(loss(t, forward(t, p)), std::log(5.0), 1e-12);
  EXPECT_NEAR(loss(t, forward(t, p), Supervision::RootOnly), std::log(5.0), 1e-12);
}

TEST(Loss, MixedThreeNodeHandCase) {
  // d = 1, W_out = (1,0,0,0,0)^T, e(a) = ln 4: leaf a predicts (0.5, 0.125 x 4).
  auto p = TreeLstmParams::zeros(Hyper{1}, CategoryTable({"NN", "S"}), std::vector<std::string>{"a"});
  p.output[0] = 1.0;
  p.embeddings["a"] = {std::log(4.0)};
  const ParseTree t = parse_ptb("(2#S#0 (0#NN#0 a) (1#NN#0 b))");
  const Annotated an = forward(t, p);
  EXPECT_NEAR(an.states[0].sentiment[0], 0.5, 1e-15);
  // b is unknown (zero vector) and the root has zero gates with zero child cells.
  const double want = (std::log(2.0) + std::log(5.0) + std::log(5.0)) / 3.0;
  EXPECT_NEAR(loss(t, an), want, 1e-12);
  EXPECT_NEAR(loss(t, an, Supervision::RootOnly), std::log(5.0), 1e-12);
}

TEST(Loss, NearPerfectPredictionsApproachZero) {
  auto p = TreeLstmParams::zeros(Hyper{1}, CategoryTable(), std::vector<std::string>{"a"});
  p.output[3] = 1.0;
  p.embeddings["a"] = {60.0};
  EXPECT_LT(loss(ParseTree::leaf("a", "NN", 3), forward(ParseTree::leaf("a", "NN", 3), p)), 1e-20);
}

TEST(Loss, NoLabeledNodes) {
  const auto p = random_params(2, 1);
  const ParseTree t = parse_ptb("(_#S#0 (_#NN#0 a) (2#NN#0 b))");
  EXPECT_THROW(loss(t, forward(t, p), Supervision::RootOnly), Error);
  EXPECT_NO_THROW(loss(t, forward(t, p), Supervision::AllLabeledNodes));
}

TEST(Backward, UnusedIndicatorBlocksHaveZeroGradient) {
  const ParseTree t = parse_ptb("(3#S#0 (2#NN#0 is) (4#VP#0 (2#VBZ#0 is) (4#JJ#0 awesome)))");
  const auto p = random_params(2, 13);
  const auto g = backward(t, forward(t, p), p);
  for (int k = 0; k < kNumGates; ++k) {
    for (int q = 1; q < kNumPairs; ++q)
      for (double v : g.linear[k][q]) EXPECT_EQ(v, 0.0);
    double used = 0;
    for (double v : g.linear[k][0]) used += std::abs(v);
    EXPECT_GT(used, 0.0);
  }
  EXPECT_EQ(g.embeddings.count("amobee"), 0u);
}

TEST(Backward, MatchesFiniteDifferencesSingleComposition) {
  auto p = random_params(2, 17, 0.3);
  const ParseTree t = parse_ptb("(4#S#1 (2#NN#1 amobee) (3#JJ#0 awesome))");
  const auto rep = gradient_check(t, p, Supervision::AllLabeledNodes, 1e-5, 1e-4);
  EXPECT_EQ(rep.failures, 0u) << rep.worst << " " << rep.max_rel_error;
  EXPECT_EQ(rep.coordinates, p.parameter_count());
}

TEST(Backward, DuplicateWordAccumulates) {
  auto p = random_params(2, 19, 0.3);
  const ParseTree t = parse_ptb("(1#S#0 (2#NN#0 is) (1#VP#0 (2#VBZ#0 is) (0#JJ#0 awesome)))");
  const auto g = backward(t, forward(t, p), p);
  ASSERT_EQ(g.embeddings.count("is"), 1u);
  const auto rep = gradient_check(t, p, Supervision::AllLabeledNodes, 1e-5, 1e-4);
  EXPECT_EQ(rep.failures, 0u) << rep.worst << " " << rep.max_rel_error;

  // Direct central difference on one coordinate of the shared embedding.
  const std::size_t m = 1;
  const double h = 1e-5;
  auto up = p, down = p;
  up.embeddings["is"][m] += h;
  down.embeddings["is"][m] -= h;
  const double fd = (loss(t, forward(t, up)) - loss(t, forward(t, down))) / (2 * h);
  EXPECT_NEAR(g.embeddings.at("is")[m], fd, 1e-6);
}

TEST(Backward, RootOnlyMatchesFiniteDifferences) {
  auto inst = random_instance(77, 3, 5);
  const auto rep = gradient_check(inst.tree, inst.params, Supervision::RootOnly);
  EXPECT_EQ(rep.failures, 0u) << rep.worst;
}

TEST(Train, ZeroLearningRateLeavesParamsUnchanged) {
  const Treebank bank = toy_bank();
  TrainSchedule s;
  s.epochs = 3;
  s.learning_rate = 0.0;
  s.seed = 5;
  const auto result = train(bank, Hyper{3}, s);
  const auto initial = TreeLstmParams::random(Hyper{3}, categories_of(bank), vocabulary(bank), derive_seed(5, 1));
  EXPECT_TRUE(same_params(result.params, initial));
  ASSERT_EQ(result.history.size(), 3u);
  EXPECT_EQ(result.history[0].validation_loss, result.history[2].validation_loss);
}

TEST(Train, LossDecreasesAndIsDeterministic) {
  const Treebank bank = toy_bank();
  TrainSchedule s;
  s.epochs = 15;
  s.seed = 9;
  const auto a = train(bank, Hyper{4}, s);
  const auto b = train(bank, Hyper{4}, s);
  s.threads = 4;
  const auto c = train(bank, Hyper{4}, s);
  EXPECT_TRUE(same_params(a.params, b.params));
  EXPECT_TRUE(same_params(a.params, c.params));
  EXPECT_LT(a.history.back().train_loss, a.history.front().train_loss);
  EXPECT_GT(a.best_epoch, 0);
}

TEST(Train, Errors) {
  Treebank empty;
  EXPECT_THROW(train(empty, Hyper{2}, TrainSchedule{}), Error);

  Treebank unlabeled;
  unlabeled.trees.push_back(parse_ptb("(_#S#0 (2#NN#0 a) (_#NN#0 b))"));
  TrainSchedule root;
  root.supervision = Supervision::RootOnly;
  try {
    train(unlabeled, Hyper{2}, root);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::NoLabeledNodes);
  }

  std::map<std::string, Vec, std::less<>> wrong{{"a", Vec(3, 0.1)}};
  try {
    train(toy_bank(), Hyper{2}, TrainSchedule{}, std::nullopt, &wrong);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmbeddingDimMismatch);
  }
}

TEST(Train, PretrainedEmbeddingsAreUsed) {
  const Treebank bank = toy_bank();
  std::map<std::string, Vec, std::less<>> pre{{"movie", Vec{0.25, -0.5}}};
  TrainSchedule s;
  s.epochs = 1;
  s.learning_rate = 0.0;
  const auto r = train(bank, Hyper{2}, s, std::nullopt, &pre);
  EXPECT_EQ(r.params.embeddings.at("movie"), (Vec{0.25, -0.5}));
}

TEST(Embeddings, ReadFile) {
  std::istringstream ok("2 3\nhappy 0.1 0.2 0.3\nsad -1 0 1\n");
  const auto e = read_embeddings(ok, 3);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e.at("sad"), (Vec{-1, 0, 1}));
  std::istringstream noheader("x 1 2\n");
  EXPECT_EQ(read_embeddings(noheader, 2).at("x"), (Vec{1, 2}));

  auto code = [](const std::string& text, int d) {
    std::istringstream in(text);
    try {
      read_embeddings(in, d);
    } catch (const Error& err) {
      return err.code();
    }
    return Errc::UsageError;
  };
  EXPECT_EQ(code("2 4\nhappy 0.1 0.2 0.3\n", 3), Errc::EmbeddingDimMismatch);
  EXPECT_EQ(code("happy 0.1 0.2\n", 3), Errc::EmbeddingDimMismatch);
}

TEST(ModelJson, BitExactRoundTrip) {
  auto p = random_params(3, 23);
  p.embeddings["tiny"] = {5e-324, -1.0 / 3.0, 0.1};
  const auto back = params_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_TRUE(same_params(p, back));

  const auto path = std::filesystem::temp_directory_path() / "sentitree_test_model.json";
  save_params(path, p);
  EXPECT_TRUE(same_params(p, load_params(path)));
  std::filesystem::remove(path);
}

TEST(ModelJson, RejectsBadFiles) {
  auto j = to_json(random_params(2, 1));
  j["version"] = 2;
  EXPECT_THROW(params_from_json(j), Error);
  auto k = to_json(random_params(2, 1));
  k["output"]["values"].erase(0);
  EXPECT_THROW(params_from_json(k), Error);
  EXPECT_THROW(params_from_json(nlohmann::json::object()), Error);
}
