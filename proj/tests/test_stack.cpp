#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sentitree/rng.hpp"
#include "sentitree/stack.hpp"

using namespace sentitree;
using namespace sentitree::stack;

namespace {

Errc code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::UsageError;
}

Dataset tiny(std::vector<std::vector<double>> x, std::vector<int> y) {
  std::vector<FeatureGroup> g;
  for (std::size_t j = 0; j < x.front().size(); ++j) g.push_back({"f" + std::to_string(j), 1, false});
  Dataset d{FeatureSchema(g), {}, {}};
  for (std::size_t i = 0; i < x.size(); ++i) d.add(x[i], y[i]);
  return d;
}

Dataset noisy_three_class(std::uint64_t seed, std::size_t n = 120) {
  Rng rng(seed);
  std::vector<std::vector<double>> x;
  std::vector<int> y;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.below(3));
    x.push_back({label + rng.uniform(-1.5, 1.5), rng.uniform(-1, 1), label == 2 ? 1.0 : rng.uniform()});
    y.push_back(label);
  }
  return tiny(x, y);
}

}  // namespace

TEST(SemanticFlags, ParseAndPrint) {
  const auto f = SemanticFlags::parse("negation, in_subject");
  EXPECT_TRUE(f[0]);
  EXPECT_TRUE(f[4]);
  EXPECT_FALSE(f[1]);
  EXPECT_EQ(f.to_string(), "in_subject,negation");
  EXPECT_EQ(SemanticFlags::parse("-"), SemanticFlags{});
  EXPECT_EQ(SemanticFlags::parse(""), SemanticFlags{});
  EXPECT_EQ(code_of([] { SemanticFlags::parse("sarcasm"); }), Errc::FormatError);
}

TEST(BuildFeatures, Lengths) {
  const std::vector<Distribution> five(5, Distribution{0.2, 0.2, 0.2, 0.2, 0.2});
  EXPECT_EQ(build_features(five, SemanticFlags::parse("quotation")).values.size(), 32u);

  const std::vector<Distribution> one{{0.1, 0.2, 0.3, 0.2, 0.2}};
  const auto fv = build_features(one, SemanticFlags{});
  ASSERT_EQ(fv.values.size(), 12u);
  EXPECT_TRUE(std::all_of(fv.values.begin() + 5, fv.values.end(), [](double v) { return v == 0.0; }));
  EXPECT_EQ(fv.schema.size(), 8u);
  EXPECT_EQ(build_features(one, SemanticFlags{}, false).values.size(), 5u);
}

TEST(BuildFeatures, SchemaMismatch) {
  const std::vector<Distribution> bad{{0.5, 0.5, 0.5, 0.0, 0.0}};
  EXPECT_EQ(code_of([&] { build_features(bad, SemanticFlags{}); }), Errc::SchemaMismatch);
  EXPECT_EQ(code_of([] { build_features(std::vector<Distribution>{}, SemanticFlags{}); }), Errc::SchemaMismatch);
  EXPECT_EQ(code_of([] { FeatureSchema({{"a", 1, false}, {"a", 2, false}}); }), Errc::SchemaMismatch);
}

TEST(FeatureSchema, ColumnsAndOffsets) {
  const auto s = FeatureSchema::pipeline(2);
  EXPECT_EQ(s.width(), 17u);
  EXPECT_EQ(s.offset(2), 10u);
  EXPECT_EQ(*s.find("negation"), 6u);
  const auto c = s.columns();
  EXPECT_EQ(c.size(), 17u);
  EXPECT_EQ(c.groups()[6].name, "model2[1]");
  EXPECT_EQ(schema_from_json(to_json(s)), s);
}

TEST(Logistic, ZeroIterationsGiveUniform) {
  LogisticConfig config;
  config.max_iterations = 0;
  const auto m = train_logistic(noisy_three_class(1), config);
  EXPECT_TRUE(std::all_of(m.weights.begin(), m.weights.end(), [](double w) { return w == 0.0; }));
  for (double p : predict_logistic(m, std::vector<double>{3, -1, 2})) EXPECT_DOUBLE_EQ(p, 1.0 / 3.0);
}

TEST(Logistic, SeparableTwoPoints) {
  LogisticConfig config;
  config.l2 = 1e-8;
  config.max_iterations = 20000;
  const auto data = tiny({{0.0}, {1.0}}, {0, 1});
  const auto m = train_logistic(data, config);
  EXPECT_EQ(predict_class(m, data.x[0]), 0);
  EXPECT_EQ(predict_class(m, data.x[1]), 1);
}

TEST(Logistic, DuplicatedDataGivesSameModel) {
  const auto data = noisy_three_class(2);
  Dataset doubled = data;
  for (std::size_t i = 0; i < data.size(); ++i) doubled.add(data.x[i], data.y[i]);
  const auto a = train_logistic(data), b = train_logistic(doubled);
  ASSERT_EQ(a.weights.size(), b.weights.size());
  for (std::size_t j = 0; j < a.weights.size(); ++j) EXPECT_NEAR(a.weights[j], b.weights[j], 1e-9);
  for (std::size_t k = 0; k < a.bias.size(); ++k) EXPECT_NEAR(a.bias[k], b.bias[k], 1e-9);
}

TEST(Logistic, RowPermutationGivesIdenticalModel) {
  const auto data = noisy_three_class(3);
  Dataset shuffled{data.schema, {}, {}};
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(3);
  rng.shuffle(order);
  for (auto i : order) shuffled.add(data.x[i], data.y[i]);
  const auto a = train_logistic(data), b = train_logistic(shuffled);
  EXPECT_EQ(a.weights, b.weights);
  EXPECT_EQ(a.bias, b.bias);
}

TEST(Logistic, ObjectiveDecreasesMonotonically) {
  std::vector<double> trace;
  LogisticConfig config;
  config.max_iterations = 300;
  const auto m = train_logistic(noisy_three_class(4), config, &trace);
  ASSERT_EQ(trace.size(), static_cast<std::size_t>(m.iterations) + 1);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-12);
  EXPECT_LT(trace.back(), trace.front());
  EXPECT_NEAR(trace.front(), std::log(3.0), 1e-12);
}

TEST(Logistic, ConvergesToTolerance) {
  LogisticConfig config;
  config.l2 = 1e-2;
  config.max_iterations = 100000;
  const auto m = train_logistic(noisy_three_class(5), config);
  EXPECT_LE(m.gradient_norm, 1e-6);
  EXPECT_LT(m.iterations, 100000);
}

TEST(Logistic, HandSetModels) {
  LogisticModel m;
  m.schema = FeatureSchema({{"a", 1, false}, {"b", 1, false}});
  m.classes = {0, 1};
  m.weights = {0, 0, 2, -1};
  m.bias = {0, 0.5};
  const auto p = predict_logistic(m, std::vector<double>{1, 0.5});
  EXPECT_NEAR(p[1], 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);

  m.weights = {0, 0, 0, 0};
  m.bias = {0, 0};
  EXPECT_EQ(predict_logistic(m, std::vector<double>{4, 4}), (std::vector<double>{0.5, 0.5}));

  m.weights = {0, 0, 50, 50};
  EXPECT_GT(predict_logistic(m, std::vector<double>{1, 1})[1], 0.999);
  EXPECT_EQ(code_of([&] { predict_logistic(m, std::vector<double>{1}); }), Errc::SchemaMismatch);
  FeatureVector fv{{1, 1}, FeatureSchema({{"x", 1, false}, {"y", 1, false}})};
  EXPECT_EQ(code_of([&] { predict_logistic(m, fv); }), Errc::SchemaMismatch);
}

TEST(Logistic, Errors) {
  EXPECT_EQ(code_of([] { train_logistic(tiny({{1.0}, {2.0}}, {1, 1})); }), Errc::SingleClassInput);
  Dataset empty{FeatureSchema({{"a", 1, false}}), {}, {}};
  EXPECT_EQ(code_of([&] { train_logistic(empty); }), Errc::EmptyInput);
}

TEST(Logistic, ProbabilitiesAreValid) {
  const auto m = train_logistic(noisy_three_class(6));
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const auto p = predict_logistic(m, std::vector<double>{rng.uniform(-9, 9), rng.uniform(-9, 9), rng.uniform(-9, 9)});
    double s = 0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Logistic, JsonRoundTrip) {
  const auto m = train_logistic(noisy_three_class(7));
  const auto back = logistic_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.weights, m.weights);
  EXPECT_EQ(back.bias, m.bias);
  EXPECT_EQ(back.classes, m.classes);
  EXPECT_EQ(back.schema, m.schema);
  auto j = to_json(m);
  j["weights"].erase(0);
  EXPECT_THROW(logistic_from_json(j), Error);
}

TEST(Mlp, ZeroLearningRateKeepsInitialization) {
  const auto data = noisy_three_class(8);
  MlpConfig config;
  config.epochs = 0;
  const auto init = train_mlp(data, config);
  config.epochs = 5;
  config.learning_rate = 0.0;
  EXPECT_EQ(train_mlp(data, config), init);
}

TEST(Mlp, LearnsXor) {
  const auto data = tiny({{0, 0}, {0, 1}, {1, 0}, {1, 1}}, {0, 1, 1, 0});
  MlpConfig config;
  config.hidden = 8;
  config.epochs = 5000;
  config.batch_size = 4;
  config.learning_rate = 0.5;
  config.seed = 1;
  const auto m = train_mlp(data, config);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto p = predict_mlp(m, data.x[i]);
    EXPECT_EQ(std::max_element(p.begin(), p.end()) - p.begin(), data.y[i]) << i;
  }
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  const auto data = noisy_three_class(9, 12);
  MlpConfig config;
  config.hidden = 5;
  config.epochs = 3;
  config.seed = 4;
  MlpModel m = train_mlp(data, config);
  std::vector<std::size_t> rows{0, 3, 4, 7, 11};
  MlpModel grad;
  const double l2 = 0.01;
  mlp_loss(m, data, rows, l2, &grad);
  std::vector<double> analytic;
  grad.for_each_block([&](const std::vector<double>& b) { analytic.insert(analytic.end(), b.begin(), b.end()); });
  std::size_t q = 0;
  double worst = 0;
  const double h = 1e-5;
  m.for_each_block([&](std::vector<double>& b) {
    for (double& w : b) {
      const double saved = w;
      w = saved + h;
      const double up = mlp_loss(m, data, rows, l2, nullptr);
      w = saved - h;
      const double down = mlp_loss(m, data, rows, l2, nullptr);
      w = saved;
      const double fd = (up - down) / (2 * h);
      const double a = analytic[q++];
      worst = std::max(worst, std::abs(a - fd) / std::max(1e-8, std::abs(a) + std::abs(fd)));
    }
  });
  EXPECT_EQ(q, analytic.size());
  EXPECT_LT(worst, 1e-4);
}

TEST(Mlp, OutputsAreDistributionsAndDeterministic) {
  const auto data = noisy_three_class(10);
  MlpConfig config;
  config.epochs = 20;
  config.seed = 2;
  const auto a = train_mlp(data, config), b = train_mlp(data, config);
  EXPECT_EQ(a, b);
  for (const auto& x : data.x) {
    const auto p = predict_mlp(a, x);
    double s = 0;
    for (double v : p) s += v;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Mlp, Errors) {
  EXPECT_EQ(code_of([] { train_mlp(Dataset{FeatureSchema({{"a", 1, false}}), {}, {}}); }), Errc::EmptyInput);
  EXPECT_EQ(code_of([] { train_mlp(tiny({{1.0}}, {7})); }), Errc::BadLabel);
}

TEST(Mlp, JsonRoundTrip) {
  MlpConfig config;
  config.epochs = 2;
  const auto m = train_mlp(noisy_three_class(11), config);
  EXPECT_EQ(mlp_from_json(nlohmann::json::parse(to_json(m).dump())), m);
}

TEST(Rfe, KeepsSignalGroupsAtTargetTwo) {
  RfeConfig config;
  config.target = 2;
  const auto r = rfe_select(oracle::two_signal_groups(5), config);
  auto selected = r.selected;
  std::sort(selected.begin(), selected.end());
  EXPECT_EQ(selected, (std::vector<std::string>{"signal_a", "signal_b"}));
  ASSERT_EQ(r.steps.size(), 9u);
  for (std::size_t s = 1; s < r.steps.size(); ++s) EXPECT_EQ(r.steps[s].groups.size() + 1, r.steps[s - 1].groups.size());
}

TEST(Rfe, AutoModeKeepsSignalGroups) {
  RfeConfig config;
  config.seed = 1;
  const auto r = rfe_select(oracle::two_signal_groups(5), config);
  auto selected = r.selected;
  std::sort(selected.begin(), selected.end());
  EXPECT_EQ(selected, (std::vector<std::string>{"signal_a", "signal_b"}));
  for (const auto& step : r.steps) EXPECT_TRUE(step.cv_score.has_value());
}

TEST(Rfe, TargetAllIsIdentity) {
  const auto data = oracle::two_signal_groups(6, 60);
  RfeConfig config;
  config.target = 10;
  const auto r = rfe_select(data, config);
  std::vector<std::string> names;
  for (const auto& g : data.schema.groups()) names.push_back(g.name);
  EXPECT_EQ(r.selected, names);
  EXPECT_EQ(r.steps.size(), 1u);
}

TEST(Rfe, ConstantGroupsArePrunedAndDegenerateInputRejected) {
  auto data = oracle::two_signal_groups(7, 60);
  for (auto& row : data.x) std::fill(row.begin(), row.begin() + 5, 0.2);
  RfeConfig config;
  config.target = 3;
  const auto r = rfe_select(data, config);
  EXPECT_EQ(r.pruned, (std::vector<std::string>{"noise1"}));
  EXPECT_EQ(r.selected.size(), 3u);

  for (auto& row : data.x) std::fill(row.begin(), row.end(), 0.2);
  EXPECT_EQ(code_of([&] { rfe_select(data, config); }), Errc::TooFewGroups);
  config.target = 11;
  EXPECT_EQ(code_of([&] { rfe_select(oracle::two_signal_groups(7, 60), config); }), Errc::UsageError);
  EXPECT_EQ(code_of([] { rfe_select(tiny({{1.0}, {2.0}}, {0, 1})); }), Errc::TooFewGroups);
}

TEST(Rfe, ColumnMode) {
  const auto data = tiny({{0, 1, 5}, {1, 1, 3}, {0, 1, 4}, {1, 1, 1}, {0, 1, 2}, {1, 1, 9}}, {0, 1, 0, 1, 0, 1});
  RfeConfig config;
  config.mode = RfeMode::Column;
  config.target = 1;
  config.logistic.l2 = 1e-3;
  const auto r = rfe_select(data, config);
  EXPECT_EQ(r.pruned, (std::vector<std::string>{"f1"}));
  EXPECT_EQ(r.selected, (std::vector<std::string>{"f0"}));
}
