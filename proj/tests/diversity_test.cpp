#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dfsq/diversity.hpp"
#include "dfsq/errors.hpp"
#include "dfsq/grad_check.hpp"
#include "test_util.hpp"

namespace dfsq {
namespace {

using testing::random_tensor;
using testing::to_vector;
using TD = Tensor<double>;

// Per-position loop over [b,t,d] rows.
double loop_distance(const TD& a, const TD& b, const std::vector<std::uint8_t>& keep) {
  const std::size_t d = a.shape().back(), rows = a.numel() / d;
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!keep.empty() && !keep[r]) continue;
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = a.data()[r * d + j], y = b.data()[r * d + j];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    sum += 1.0 - dot * dot / (na * nb);
    ++n;
  }
  return sum / static_cast<double>(n);
}

LayerStates<double> states_of(std::vector<TD> layers) {
  LayerStates<double> s;
  s.backbone = std::move(layers);
  s.final = s.backbone.back();
  return s;
}

TEST(PairDistance, IdenticalIsZero) {
  std::mt19937_64 rng(1);
  auto a = random_tensor(rng, {2, 3, 5});
  EXPECT_NEAR(pair_distance(a, a).item(), 0.0, 1e-15);
}

TEST(PairDistance, OppositeIsZero) {
  std::mt19937_64 rng(2);
  auto a = random_tensor(rng, {2, 3, 5});
  EXPECT_NEAR(pair_distance(a, scale(a, -1.0)).item(), 0.0, 1e-15);
}

TEST(PairDistance, OrthogonalIsOne) {
  auto a = TD::from({1, 2, 2}, {1, 0, 0, 3});
  auto b = TD::from({1, 2, 2}, {0, 2, -1, 0});
  EXPECT_DOUBLE_EQ(pair_distance(a, b).item(), 1.0);
}

TEST(PairDistance, MatchesLoopOracleWithPadding) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_tensor(rng, {3, 4, 6});
    auto b = random_tensor(rng, {3, 4, 6});
    std::vector<std::uint8_t> keep{1, 1, 1, 0, 1, 0, 0, 0, 1, 1, 1, 1};
    EXPECT_NEAR(pair_distance(a, b, keep).item(), loop_distance(a, b, keep), 1e-12);
  }
}

TEST(PairDistance, PaddedRowsCanHoldAnything) {
  auto a = TD::from({1, 2, 2}, {1, 1, 0, 0});  // the zero row is padding
  auto b = TD::from({1, 2, 2}, {1, -1, 5, 5});
  std::vector<std::uint8_t> keep{1, 0};
  EXPECT_DOUBLE_EQ(pair_distance(a, b, keep).item(), 1.0);
}

TEST(PairDistance, InvariantToPositionwiseScaling) {
  std::mt19937_64 rng(4);
  auto a = random_tensor(rng, {2, 3, 4}, false);
  auto b = random_tensor(rng, {2, 3, 4}, false);
  const double base = pair_distance(a, b).item();
  std::uniform_real_distribution<double> s(0.1, 10.0);
  auto scaled = TD::from(a.shape(), to_vector(a));
  auto v = scaled.mutable_data();
  for (std::size_t r = 0; r < 6; ++r) {
    const double f = (r % 2 ? -1.0 : 1.0) * s(rng);
    for (std::size_t j = 0; j < 4; ++j) v[r * 4 + j] *= f;
  }
  EXPECT_NEAR(pair_distance(scaled, b).item(), base, 1e-9);
}

TEST(PairDistance, ZeroVectorIsAnError) {
  auto a = TD::from({1, 1, 2}, {0, 0});
  auto b = TD::from({1, 1, 2}, {1, 0});
  EXPECT_THROW(pair_distance(a, b), NumericalError);
}

TEST(PairDistance, ShapeMismatchIsAnError) {
  auto a = TD::from({1, 1, 2}, {1, 0});
  auto b = TD::from({1, 2, 1}, {1, 0});
  EXPECT_THROW(pair_distance(a, b), DimensionError);
}

TEST(DiversityLoss, IdenticalLayersGiveZero) {
  std::mt19937_64 rng(5);
  auto h = random_tensor(rng, {2, 3, 4});
  auto s = states_of({random_tensor(rng, {2, 3, 4}), h, h, h, h});
  EXPECT_NEAR(diversity_loss(s).item(), 0.0, 1e-15);
}

TEST(DiversityLoss, TwoLayersEqualsSinglePair) {
  std::mt19937_64 rng(6);
  auto s = states_of({random_tensor(rng, {2, 3, 4}), random_tensor(rng, {2, 3, 4}),
                      random_tensor(rng, {2, 3, 4})});
  EXPECT_DOUBLE_EQ(diversity_loss(s).item(), pair_distance(s.backbone[1], s.backbone[2]).item());
}

TEST(DiversityLoss, MatchesLoopOracleAndIgnoresEmbeddingAndAggNodes) {
  std::mt19937_64 rng(7);
  std::vector<TD> layers;
  for (int l = 0; l <= 5; ++l) layers.push_back(random_tensor(rng, {2, 4, 3}));
  auto s = states_of(layers);
  s.agg_nodes = {random_tensor(rng, {2, 4, 3})};
  std::vector<std::uint8_t> keep{1, 1, 1, 1, 1, 1, 0, 0};
  double want = 0.0;
  for (int l = 1; l < 5; ++l) want += loop_distance(layers[l], layers[l + 1], keep);
  EXPECT_NEAR(diversity_loss(s, keep).item(), want / 4.0, 1e-12);
}

TEST(DiversityLoss, NeedsTwoLayers) {
  std::mt19937_64 rng(8);
  auto s = states_of({random_tensor(rng, {1, 2, 3}), random_tensor(rng, {1, 2, 3})});
  EXPECT_THROW(diversity_loss(s), ConfigError);
}

TEST(DiversityLoss, StaysInUnitInterval) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TD> layers;
    for (int l = 0; l <= 4; ++l) layers.push_back(random_tensor(rng, {2, 3, 2}));
    // Mix in some exactly parallel layers, where rounding could push cos^2 past 1.
    if (trial % 3 == 0) layers[2] = scale(layers[1], 3.7);
    const double v = diversity_loss(states_of(layers)).item();
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(TotalLoss, LambdaZeroReturnsNll) {
  auto nll = TD::scalar(1.25);
  auto out = total_loss(nll, TD::scalar(0.3), TD::scalar(0.7), 0.0);
  EXPECT_EQ(out.item(), 1.25);
}

TEST(TotalLoss, SubtractsMeanDiversity) {
  auto out = total_loss(TD::scalar(1.0), TD::scalar(0.5), TD::scalar(0.5), 1.0);
  EXPECT_DOUBLE_EQ(out.item(), 0.5);
  out = total_loss(TD::scalar(2.0), TD::scalar(0.2), TD::scalar(0.6), 0.5);
  EXPECT_DOUBLE_EQ(out.item(), 2.0 - 0.5 * 0.4);
}

TEST(TotalLoss, NegativeLambdaIsAnError) {
  EXPECT_THROW(total_loss(TD::scalar(1.0), TD::scalar(0.5), TD::scalar(0.5), -0.1), ConfigError);
}

TEST(TotalLoss, GradientWrtLayerStatesMatchesFiniteDifferences) {
  std::mt19937_64 rng(10);
  std::vector<TD> enc, dec;
  for (int l = 0; l <= 3; ++l) enc.push_back(random_tensor(rng, {2, 3, 4}));
  for (int l = 0; l <= 3; ++l) dec.push_back(random_tensor(rng, {2, 2, 4}));
  auto nll = random_tensor(rng, {1});
  std::vector<std::uint8_t> keep_e{1, 1, 0, 1, 1, 1}, keep_d{1, 1, 1, 0};
  auto loss = [&] {
    return total_loss(sum(nll), diversity_loss(states_of(enc), keep_e),
                      diversity_loss(states_of(dec), keep_d), 1.0);
  };
  std::vector<TD> params{enc[1], enc[2], enc[3], dec[1], dec[2], dec[3], nll};
  EXPECT_LT(grad_check(loss, params), 1e-6);
}

TEST(DiversityReport, MeanOfDistancesAndSimilarity) {
  std::mt19937_64 rng(11);
  std::vector<TD> layers;
  for (int l = 0; l <= 4; ++l) layers.push_back(random_tensor(rng, {1, 3, 4}));
  const auto r = diversity_report(states_of(layers), {}, "encoder");
  ASSERT_EQ(r.distances.size(), 3u);
  double mean = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(r.distances[i], loop_distance(layers[i + 1], layers[i + 2], {}), 1e-12);
    EXPECT_GE(r.distances[i], 0.0);
    EXPECT_LE(r.distances[i], 1.0);
    mean += r.distances[i] / 3.0;
  }
  EXPECT_NEAR(r.mean, mean, 1e-15);
  EXPECT_NEAR(r.similarity(), 1.0 - mean, 1e-15);
  EXPECT_EQ(r.side, "encoder");
}

}  // namespace
}  // namespace dfsq
