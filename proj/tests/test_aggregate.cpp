#include <gtest/gtest.h>

#include <vector>

#include "oracles.hpp"
#include "sentitree/aggregate.hpp"
#include "sentitree/rng.hpp"

using namespace sentitree;
using namespace sentitree::aggregate;

namespace {

SentencePrediction sentence(Distribution d, double f, double l) { return {d, f, l}; }

const Distribution kUniform{0.2, 0.2, 0.2, 0.2, 0.2};

}  // namespace

TEST(Polarity, Examples) {
  EXPECT_EQ(polarity(kUniform), 0.0);
  EXPECT_EQ(polarity({1, 0, 0, 0, 0}), 10.0);
  EXPECT_EQ(polarity({0, 0, 0, 0, 1}), 10.0);
  EXPECT_NEAR(polarity({0.1, 0.2, 0.2, 0.3, 0.2}), 1.1, 1e-12);
  EXPECT_EQ(polarity({0, 0, 1, 0, 0}), 0.0);
}

TEST(Polarity, RangeOnRandomDistributions) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto d = oracle::random_dist(rng);
    const double p = polarity(d);
    EXPECT_GE(p, 0.0);
    EXPECT_LT(p, 10.0);
  }
}

TEST(Weight, Examples) {
  EXPECT_EQ(weight(sentence(kUniform, 0.3, 7), {0, 0, 0}), 2.0);
  EXPECT_EQ(weight(sentence(kUniform, 1, 2), {1, 1, 5}), 5.0);
  EXPECT_EQ(weight(sentence(kUniform, 0, 1), {1.7, -3, 2.5}), 2.0);
}

TEST(Weight, AlwaysAboveOne) {
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const auto s = sentence(oracle::random_dist(rng), rng.uniform(), 1 + rng.below(40));
    const AggregationParams p{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    EXPECT_GT(weight(s, p), 1.0);
  }
}

TEST(AggregateTweet, SingleSentenceUnchanged) {
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    const std::vector<SentencePrediction> one{sentence(oracle::random_dist(rng), rng.uniform(), 1 + rng.below(9))};
    const auto out = aggregate_tweet(one, {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(out[c], one[0].dist[c], 1e-15);
  }
}

TEST(AggregateTweet, EqualWeightsGiveMean) {
  const Distribution a{0.5, 0.2, 0.1, 0.1, 0.1}, b{0.1, 0.1, 0.2, 0.2, 0.4};
  const std::vector<SentencePrediction> s{sentence(a, 0.5, 3), sentence(b, 0.5, 3)};
  // Same polarity is not required when gamma = 0.
  const auto out = aggregate_tweet(s, {1, 1, 0});
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(out[c], (a[c] + b[c]) / 2, 1e-15);
}

TEST(AggregateTweet, WeightsFiveAndTwo) {
  const Distribution p1{0.2, 0.2, 0.2, 0.2, 0.2};
  const Distribution p2{0.1, 0.2, 0.4, 0.2, 0.1};
  // Both have polarity 0: weight = (1+f)^1 * l^1 * 1 + 1.
  const std::vector<SentencePrediction> s{sentence(p1, 1, 2), sentence(p2, 0, 1)};
  const AggregationParams params{1, 1, 5};
  ASSERT_EQ(weight(s[0], params), 5.0);
  ASSERT_EQ(weight(s[1], params), 2.0);
  const auto out = aggregate_tweet(s, params);
  for (int c = 0; c < 5; ++c) EXPECT_NEAR(out[c], (5 * p1[c] + 2 * p2[c]) / 7, 1e-15);
}

TEST(AggregateTweet, OutputIsDistribution) {
  Rng rng(4);
  for (int i = 0; i < 500; ++i) {
    std::vector<SentencePrediction> s;
    for (std::size_t k = 0, n = 1 + rng.below(5); k < n; ++k)
      s.push_back(sentence(oracle::random_dist(rng), rng.uniform(), 1 + rng.below(30)));
    const auto out = aggregate_tweet(s, {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)});
    double sum = 0;
    for (double v : out) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(AggregateTweet, ScaleInvariance) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    std::vector<SentencePrediction> s;
    std::vector<double> w;
    for (std::size_t k = 0, n = 2 + rng.below(4); k < n; ++k) {
      s.push_back(sentence(oracle::random_dist(rng), rng.uniform(), 1 + rng.below(30)));
      w.push_back(weight(s.back(), {0.5, 1, -0.5}));
    }
    std::vector<double> scaled = w;
    const double factor = std::exp(rng.uniform(-5, 5));
    for (double& v : scaled) v *= factor;
    const auto a = combine(s, w), b = combine(s, scaled);
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(a[c], b[c], 1e-14);
  }
  // Identical sentence features give equal weights under any parameters.
  const Distribution d1{0.4, 0.3, 0.1, 0.1, 0.1}, d2{0.1, 0.1, 0.1, 0.3, 0.4};
  const std::vector<SentencePrediction> same{sentence(d1, 0.5, 4), sentence(d2, 0.5, 4)};
  ASSERT_EQ(polarity(d1), polarity(d2));
  const auto ref = aggregate_tweet(same, {0, 0, 0});
  for (const AggregationParams p : {AggregationParams{2, -1, 0.5}, AggregationParams{-2, 2, -2}}) {
    const auto out = aggregate_tweet(same, p);
    for (int c = 0; c < 5; ++c) EXPECT_NEAR(out[c], ref[c], 1e-15);
  }
}

TEST(AggregateTweet, EmptyTweet) {
  try {
    aggregate_tweet(std::vector<SentencePrediction>{}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyTweet);
  }
}

TEST(FitParams, SingleSentenceDataReturnsOrigin) {
  Rng rng(6);
  std::vector<LabeledTweet> tweets;
  for (int i = 0; i < 30; ++i)
    tweets.push_back({{sentence(oracle::random_dist(rng), rng.uniform(), 1 + rng.below(20))},
                      static_cast<int>(rng.below(5))});
  const auto fit = fit_params(tweets);
  EXPECT_EQ(fit.params, (AggregationParams{0, 0, 0}));
  EXPECT_EQ(fit.grid_points, 343u);
}

TEST(FitParams, SinglePointGrid) {
  const auto tweets = oracle::long_sentence_signal(1, 20);
  FitConfig config;
  config.grid = {0.5};
  config.max_rounds = 0;
  EXPECT_EQ(fit_params(tweets, config).params, (AggregationParams{0.5, 0.5, 0.5}));
}

TEST(FitParams, RecoversPositiveLengthExponent) {
  const auto tweets = oracle::long_sentence_signal(3);
  const auto fit = fit_params(tweets);
  EXPECT_GT(fit.params.beta, 0.0);
}

TEST(FitParams, NoWorseThanAnyGridPoint) {
  const auto tweets = oracle::long_sentence_signal(8, 60);
  FitConfig config;
  const auto fit = fit_params(tweets, config);
  EXPECT_NEAR(fit.objective, objective(tweets, fit.params), 1e-12);
  for (double a : config.grid)
    for (double b : config.grid)
      for (double g : config.grid) EXPECT_LE(fit.objective, objective(tweets, {a, b, g}));
}

TEST(FitParams, Errors) {
  EXPECT_THROW(fit_params(std::vector<LabeledTweet>{}), Error);
  std::vector<LabeledTweet> bad{{{sentence(kUniform, 1, 1)}, 5}};
  EXPECT_THROW(fit_params(bad), Error);
}
