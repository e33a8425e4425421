#include <gtest/gtest.h>

#include <cmath>

#include "pseudocam/error.hpp"
#include "pseudocam/layers.hpp"
#include "test_util.hpp"

namespace pseudocam {
namespace {

using testing::random_tensor;

// Per-channel mean and biased variance of an [N, C, ...] tensor.
std::pair<std::vector<double>, std::vector<double>> channel_moments(const Tensor& t) {
  const std::size_t n = t.dim(0), c = t.dim(1), inner = t.size() / (n * c);
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < inner; ++i) s += t[(b * c + ch) * inner + i];
    }
    mean[ch] = s / static_cast<double>(n * inner);
    double q = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t i = 0; i < inner; ++i) {
        const double d = t[(b * c + ch) * inner + i] - mean[ch];
        q += d * d;
      }
    }
    var[ch] = q / static_cast<double>(n * inner);
  }
  return {mean, var};
}

TEST(BatchNorm, TrainOutputIsStandardizedPerChannel) {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    BatchNorm bn("bn", 5);
    Tensor x = random_tensor({8, 5, 4, 4}, rng, -3.0, 3.0);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += 10.0 * static_cast<double>((i / 16) % 5);
    LayerCache cache;
    const Tensor y = bn.forward(x, ForwardContext{true, &rng}, cache);
    const auto [mean, var] = channel_moments(y);
    for (std::size_t c = 0; c < 5; ++c) {
      EXPECT_LT(std::abs(mean[c]), 1e-6);
      EXPECT_NEAR(var[c], 1.0, 1e-5);
    }
  }
}

TEST(BatchNorm, FlatFeaturesStandardized) {
  Rng rng(18);
  BatchNorm bn("bn", 3);
  const Tensor x = random_tensor({32, 3}, rng, -5.0, 5.0);
  LayerCache cache;
  const auto [mean, var] = channel_moments(bn.forward(x, ForwardContext{true, &rng}, cache));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_LT(std::abs(mean[c]), 1e-6);
    EXPECT_NEAR(var[c], 1.0, 1e-5);
  }
}

TEST(BatchNorm, RunningStatsFollowMomentum) {
  Rng rng(19);
  BatchNorm bn("bn", 1);
  Tensor x({4, 1}, std::vector<double>{1, 2, 3, 6});
  LayerCache cache;
  bn.forward(x, ForwardContext{true, &rng}, cache);
  bn.commit_stats(cache);
  // mean 3, biased variance 3.5 (unbiased 14/3); running starts at (0, 1).
  EXPECT_NEAR(bn.running_mean()[0], 0.1 * 3.0, 1e-15);
  EXPECT_NEAR(bn.running_var()[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-15);
}

TEST(BatchNorm, EvalUsesRunningStats) {
  BatchNorm bn("bn", 1);
  LayerCache cache;
  const Tensor x({2, 1}, std::vector<double>{2.0, -1.0});
  const Tensor y = bn.forward(x, ForwardContext{false, nullptr}, cache);
  EXPECT_NEAR(y[0], 2.0 / std::sqrt(1.0 + BatchNorm::kEpsilon), 1e-15);
  EXPECT_NEAR(y[1], -1.0 / std::sqrt(1.0 + BatchNorm::kEpsilon), 1e-15);
}

TEST(Dropout, InvertedScalingKeepsExpectation) {
  Rng rng(23);
  Dropout d(0.6);
  const Tensor x({1, 1}, std::vector<double>{2.5});
  double sum = 0.0;
  const int draws = 100000;  // sd of the mean ~0.004
  for (int i = 0; i < draws; ++i) {
    LayerCache cache;
    sum += d.forward(x, ForwardContext{true, &rng}, cache)[0] / 2.5;
  }
  EXPECT_NEAR(sum / draws, 1.0, 0.02);
}

TEST(Dropout, EvalIsIdentity) {
  Rng rng(1);
  Dropout d(0.6);
  const Tensor x = random_tensor({3, 4}, rng);
  LayerCache cache;
  EXPECT_EQ(d.forward(x, ForwardContext{false, nullptr}, cache), x);
}

TEST(Dropout, RejectsBadProbability) {
  EXPECT_THROW(Dropout(1.0), ConfigError);
  EXPECT_THROW(Dropout(-0.1), ConfigError);
}

TEST(Transition, ChannelCountIsHalfFloor) {
  for (std::size_t m = 1; m <= 64; ++m) EXPECT_EQ(transition_channels(m), m / 2) << m;
}

TEST(Transition, LayerEmitsHalfFloorMaps) {
  Rng rng(2);
  for (std::size_t m = 2; m <= 64; ++m) {
    Transition t("t", m, 0.5, rng);
    EXPECT_EQ(t.output_shape({m, 4, 4}), (Shape{m / 2, 2, 2})) << m;
  }
}

TEST(Transition, SingleMapRejected) {
  Rng rng(2);
  EXPECT_THROW(Transition("t", 1, 0.5, rng), ConfigError);
}

TEST(DenseBlock, TwelveMapsGiveSixAfterTransition) {
  Rng rng(3);
  DenseBlock block("b", 4, 2, 4, rng);
  ASSERT_EQ(block.out_channels(), 12u);
  Transition t("t", block.out_channels(), 0.5, rng);
  EXPECT_EQ(t.out_channels(), 6u);
}

TEST(DenseBlock, SevenMapsGiveThree) {
  Rng rng(3);
  DenseBlock block("b", 3, 2, 2, rng);
  ASSERT_EQ(block.out_channels(), 7u);
  EXPECT_EQ(Transition("t", 7, 0.5, rng).out_channels(), 3u);
}

TEST(DenseBlock, ConnectionCount) {
  Rng rng(4);
  for (std::size_t depth = 1; depth <= 6; ++depth) {
    DenseBlock block("b", 5, depth, 3, rng);
    EXPECT_EQ(block.connection_count(), depth * (depth + 1) / 2);
  }
}

TEST(DenseBlock, OutputStartsWithInput) {
  Rng rng(5);
  DenseBlock block("b", 2, 2, 3, rng);
  const Tensor x = random_tensor({2, 2, 4, 4}, rng);
  LayerCache cache;
  const Tensor y = block.forward(x, ForwardContext{true, &rng}, cache);
  ASSERT_EQ(y.shape(), (Shape{2, 8, 4, 4}));
  EXPECT_EQ(slice_channels(y, 0, 2), x);
}

TEST(GapGmpConcat, MatchesReduce) {
  Rng rng(6);
  const Tensor x = random_tensor({3, 4, 5, 5}, rng);
  GapGmpConcat g;
  LayerCache cache;
  const Tensor y = g.forward(x, ForwardContext{}, cache);
  const Tensor mean = reduce(x, {2, 3}, ReduceMode::kMean);
  const Tensor max = reduce(x, {2, 3}, ReduceMode::kMax);
  ASSERT_EQ(y.shape(), (Shape{3, 8}));
  for (std::size_t n = 0; n < 3; ++n) {
    for (std::size_t c = 0; c < 4; ++c) {
      EXPECT_EQ(y.at(n, c), mean.at(n, c));
      EXPECT_EQ(y.at(n, 4 + c), max.at(n, c));
    }
  }
}

TEST(Conv, SameShapeAndHandValue) {
  Rng rng(7);
  Conv conv("c", 1, 1, 3, rng);
  std::vector<Param*> params;
  conv.collect_params(params);
  ASSERT_EQ(params.size(), 2u);
  params[0]->value.fill(1.0);
  params[1]->value.fill(0.5);
  Tensor x({1, 1, 3, 3}, 1.0);
  LayerCache cache;
  const Tensor y = conv.forward(x, ForwardContext{}, cache);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
  EXPECT_EQ(y[4], 9.5);  // centre sees all nine inputs
  EXPECT_EQ(y[0], 4.5);  // corner sees four with zero padding
}

TEST(Conv, WithoutBiasHasOnlyWeights) {
  Rng rng(7);
  Conv conv("c", 2, 3, 3, rng, false);
  std::vector<Param*> params;
  conv.collect_params(params);
  ASSERT_EQ(params.size(), 1u);
  EXPECT_EQ(params[0]->name, "c.weight");
  EXPECT_FALSE(conv.has_bias());
}

TEST(ChannelHelpers, ConcatThenSlice) {
  Rng rng(8);
  const Tensor a = random_tensor({2, 2, 3, 3}, rng), b = random_tensor({2, 3, 3, 3}, rng);
  const Tensor c = concat_channels(a, b);
  EXPECT_EQ(slice_channels(c, 0, 2), a);
  EXPECT_EQ(slice_channels(c, 2, 5), b);
}

TEST(LayerKind, NamesRoundTrip) {
  for (LayerKind k : {LayerKind::kDense, LayerKind::kConv3x3, LayerKind::kBatchNorm, LayerKind::kRelu,
                      LayerKind::kSigmoid, LayerKind::kGapGmpConcat, LayerKind::kDropout, LayerKind::kDenseBlock,
                      LayerKind::kTransition}) {
    EXPECT_EQ(parse_layer_kind(layer_kind_name(k)), k);
  }
  EXPECT_THROW(parse_layer_kind("lstm"), ConfigError);
}

}  // namespace
}  // namespace pseudocam
