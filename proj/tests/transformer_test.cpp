#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "dfsq/errors.hpp"
#include "dfsq/transformer.hpp"
#include "reference.hpp"
#include "test_util.hpp"

namespace dfsq {
namespace {

using testing::random_tensor;
using TD = Tensor<double>;

void randomize(ParamStore<double>& store, std::mt19937_64& rng, double scale = 0.5) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& [name, t] : store.entries()) {
    auto v = Tensor<double>(t).mutable_data();
    for (auto& x : v) x = dist(rng);
  }
}

ref::Vec norm_gain(const NormParams<double>& n) { return ref::vec(n.gain); }
ref::Vec norm_bias(const NormParams<double>& n) { return ref::vec(n.bias); }

ref::Mat ref_encoder_layer(const ref::Mat& x, const LayerParams<double>& p, std::size_t heads,
                           double eps, const std::vector<std::vector<int>>& keep = {}) {
  using namespace ref;
  auto a = attention(x, x, mat(p.self.wq), mat(p.self.wk), mat(p.self.wv), mat(p.self.wo), heads,
                     keep);
  auto c = layer_norm(plus(a, x), norm_gain(p.norms[0]), norm_bias(p.norms[0]), eps);
  auto f = ffn(c, mat(p.w1), vec(p.b1), mat(p.w2), vec(p.b2));
  return layer_norm(plus(f, c), norm_gain(p.norms[1]), norm_bias(p.norms[1]), eps);
}

ref::Mat ref_decoder_layer(const ref::Mat& x, const ref::Mat& mem, const LayerParams<double>& p,
                           std::size_t heads, double eps) {
  using namespace ref;
  std::vector<std::vector<int>> causal(x.size(), std::vector<int>(x.size(), 0));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j <= i; ++j) causal[i][j] = 1;
  auto a = attention(x, x, mat(p.self.wq), mat(p.self.wk), mat(p.self.wv), mat(p.self.wo), heads,
                     causal);
  auto c = layer_norm(plus(a, x), norm_gain(p.norms[0]), norm_bias(p.norms[0]), eps);
  const auto& cr = *p.cross;
  auto e = attention(c, mem, mat(cr.wq), mat(cr.wk), mat(cr.wv), mat(cr.wo), heads);
  auto dd = layer_norm(plus(e, c), norm_gain(p.norms[1]), norm_bias(p.norms[1]), eps);
  auto f = ffn(dd, mat(p.w1), vec(p.b1), mat(p.w2), vec(p.b2));
  return layer_norm(plus(f, dd), norm_gain(p.norms[2]), norm_bias(p.norms[2]), eps);
}

TEST(PositionalEncoding, MatchesDirectFormula) {
  const std::size_t d = 8;
  for (std::size_t pos : {0u, 1u, 5u, 17u}) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double freq = std::exp(-std::log(10000.0) * (2.0 * i) / d);
      EXPECT_NEAR(positional_encoding(pos, 2 * i, d), std::sin(pos * freq), 1e-12);
      EXPECT_NEAR(positional_encoding(pos, 2 * i + 1, d), std::cos(pos * freq), 1e-12);
    }
  }
}

TEST(Embed, ZeroTableGivesPositionZeroEncoding) {
  auto table = TD::zeros({5, 6});
  auto x = embed(TokenGrid{{1, 1}, {3}}, table);
  EXPECT_EQ(x.shape(), (Shape{1, 1, 6}));
  for (std::size_t j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(x.data()[j], j % 2 == 0 ? 0.0 : 1.0);
}

TEST(Embed, SameTokenDiffersOnlyByPosition) {
  std::mt19937_64 rng(3);
  auto table = random_tensor<double>(rng, {5, 4}, false);
  auto x = embed(TokenGrid{{1, 2}, {2, 2}}, table);
  for (std::size_t j = 0; j < 4; ++j) {
    const double diff = x.data()[4 + j] - x.data()[j];
    EXPECT_NEAR(diff, positional_encoding(1, j, 4) - positional_encoding(0, j, 4), 1e-12);
  }
  auto y = embed(TokenGrid{{1, 1}, {2}}, table, 0, false);
  EXPECT_NEAR(y.data()[0], table.data()[8] * 2.0, 1e-12);
}

TEST(Embed, RejectsOutOfRangeId) {
  auto table = TD::zeros({5, 4});
  EXPECT_THROW(embed(TokenGrid{{1, 2}, {1, 5}}, table), DimensionError);
}

TEST(Masks, CausalCombinesPadding) {
  std::vector<std::uint8_t> keep{1, 1, 0};
  auto m = causal_mask(keep, 1, 3);
  EXPECT_EQ(m.shape, (Shape{1, 1, 3, 3}));
  EXPECT_EQ(m.keep, (std::vector<std::uint8_t>{1, 0, 0, 1, 1, 0, 1, 1, 0}));
  auto p = key_padding_mask(keep, 1, 3);
  EXPECT_EQ(p.shape, (Shape{1, 1, 1, 3}));
}

class AttentionTest : public ::testing::Test {
 protected:
  ParamStore<double> store{7};
  std::mt19937_64 rng{11};
};

TEST_F(AttentionTest, SingleKeyIgnoresScores) {
  auto p = AttentionParams<double>::create(store, "a", 4);
  randomize(store, rng);
  auto q = random_tensor<double>(rng, {2, 3, 4}, false);
  auto kv = random_tensor<double>(rng, {2, 1, 4}, false);
  auto out = multi_head_attention(q, kv, kv, nullptr, p, 2);
  auto expect = ref::mul(ref::mul(ref::slice(kv, 1), ref::mat(p.wv)), ref::mat(p.wo));
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(out.data()[(3 + t) * 4 + j], expect[0][j], 1e-12);
}

TEST_F(AttentionTest, MatchingKeyGetsLargestWeight) {
  const std::size_t d = 4;
  auto p = AttentionParams<double>::create(store, "a", d);
  for (auto* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
    auto v = w->mutable_data();
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) v[i * d + j] = i == j ? 1.0 : 0.0;
  }
  // Keys are scaled one-hot rows, values the identity, so output row = attention weights.
  std::vector<double> keys(d * d, 0.0);
  for (std::size_t j = 0; j < d; ++j) keys[j * d + j] = 3.0;
  auto k = TD::from({1, d, d}, keys);
  auto v = TD::from({1, d, d}, std::vector<double>(keys.size()));
  for (std::size_t j = 0; j < d; ++j) v.mutable_data()[j * d + j] = 1.0;
  auto q = TD::from({1, 1, d}, {0, 0, 3, 0});
  auto out = multi_head_attention(q, k, v, nullptr, p, 1);
  for (std::size_t j = 0; j < d; ++j)
    if (j != 2) EXPECT_GT(out.data()[2], out.data()[j]);
}

TEST_F(AttentionTest, MatchesPerHeadLoop) {
  auto p = AttentionParams<double>::create(store, "a", 8);
  randomize(store, rng);
  auto q = random_tensor<double>(rng, {2, 3, 8}, false);
  auto kv = random_tensor<double>(rng, {2, 5, 8}, false);
  std::vector<std::uint8_t> keep{1, 1, 1, 0, 0, 1, 1, 1, 1, 1};
  auto mask = key_padding_mask(keep, 2, 5);
  auto out = multi_head_attention(q, kv, kv, &mask, p, 4);
  for (std::size_t b = 0; b < 2; ++b) {
    std::vector<std::vector<int>> vis(3, std::vector<int>(5));
    for (auto& row : vis)
      for (std::size_t j = 0; j < 5; ++j) row[j] = keep[b * 5 + j];
    auto expect = ref::attention(ref::slice(q, b), ref::slice(kv, b), ref::mat(p.wq),
                                 ref::mat(p.wk), ref::mat(p.wv), ref::mat(p.wo), 4, vis);
    EXPECT_LT(ref::max_abs_diff(ref::slice(out, b), expect), 1e-6);
  }
}

TEST_F(AttentionTest, FullyMaskedRowIsAnError) {
  auto p = AttentionParams<double>::create(store, "a", 4);
  auto x = random_tensor<double>(rng, {1, 2, 4}, false);
  std::vector<std::uint8_t> keep{0, 0};
  auto mask = key_padding_mask(keep, 1, 2);
  EXPECT_THROW(multi_head_attention(x, x, x, &mask, p, 2), NumericalError);
}

class LayerTest : public ::testing::Test {
 protected:
  ParamStore<double> store{5};
  std::mt19937_64 rng{13};
  LayerOptions opt{2, 1e-6};
};

TEST_F(LayerTest, ZeroWeightsGiveDoubleNormalization) {
  auto p = LayerParams<double>::create(store, "enc", 4, 6, false);
  for (auto& [name, t] : store.entries()) {
    if (name.find(".ln") != std::string::npos) continue;
    for (auto& x : Tensor<double>(t).mutable_data()) x = 0.0;
  }
  auto x = random_tensor<double>(rng, {1, 3, 4}, false);
  auto h = encoder_layer(x, x, nullptr, p, opt);
  ref::Vec ones(4, 1.0), zeros(4, 0.0);
  auto expect = ref::layer_norm(ref::layer_norm(ref::slice(x, 0), ones, zeros, 1e-6), ones, zeros,
                                1e-6);
  EXPECT_LT(ref::max_abs_diff(ref::slice(h, 0), expect), 1e-9);
}

TEST_F(LayerTest, EncoderMatchesScriptedOracle) {
  auto p = LayerParams<double>::create(store, "enc", 4, 6, false);
  randomize(store, rng);
  auto x = random_tensor<double>(rng, {2, 3, 4}, false);
  auto h = encoder_layer(x, x, nullptr, p, opt);
  for (std::size_t b = 0; b < 2; ++b)
    EXPECT_LT(ref::max_abs_diff(ref::slice(h, b), ref_encoder_layer(ref::slice(x, b), p, 2, 1e-6)),
              1e-6);
}

TEST_F(LayerTest, DecoderMatchesScriptedOracle) {
  auto p = LayerParams<double>::create(store, "dec", 4, 6, true);
  randomize(store, rng);
  auto y = random_tensor<double>(rng, {2, 3, 4}, false);
  auto mem = random_tensor<double>(rng, {2, 5, 4}, false);
  std::vector<std::uint8_t> tkeep(6, 1);
  auto self_mask = causal_mask(tkeep, 2, 3);
  auto h = decoder_layer(y, y, mem, &self_mask, nullptr, p, opt);
  for (std::size_t b = 0; b < 2; ++b) {
    auto expect = ref_decoder_layer(ref::slice(y, b), ref::slice(mem, b), p, 2, 1e-6);
    EXPECT_LT(ref::max_abs_diff(ref::slice(h, b), expect), 1e-6);
  }
}

TEST_F(LayerTest, PaddedPositionsNeverReachRealOutputs) {
  auto p = LayerParams<double>::create(store, "enc", 4, 6, false);
  randomize(store, rng);
  auto x = random_tensor<double>(rng, {1, 4, 4}, false);
  std::vector<std::uint8_t> keep{1, 1, 0, 0};
  auto mask = key_padding_mask(keep, 1, 4);
  auto before = encoder_layer(x, x, &mask, p, opt);
  auto x2 = x.detach();
  for (std::size_t j = 8; j < 16; ++j) x2.mutable_data()[j] += 5.0 * (j % 3 + 1);
  auto after = encoder_layer(x2, x2, &mask, p, opt);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(before.data()[j], after.data()[j]);
}

TEST_F(LayerTest, DecoderIsCausal) {
  auto p = LayerParams<double>::create(store, "dec", 4, 6, true);
  randomize(store, rng);
  auto y = random_tensor<double>(rng, {1, 4, 4}, false);
  auto mem = random_tensor<double>(rng, {1, 3, 4}, false);
  std::vector<std::uint8_t> keep(4, 1);
  auto m = causal_mask(keep, 1, 4);
  auto before = decoder_layer(y, y, mem, &m, nullptr, p, opt);
  for (std::size_t t = 0; t < 3; ++t) {
    auto y2 = y.detach();
    for (std::size_t j = (t + 1) * 4; j < 16; ++j) y2.mutable_data()[j] = -y2.data()[j] + 0.3;
    auto after = decoder_layer(y2, y2, mem, &m, nullptr, p, opt);
    for (std::size_t j = 0; j < (t + 1) * 4; ++j) EXPECT_EQ(before.data()[j], after.data()[j]);
  }
}

TEST_F(LayerTest, SingleMemoryRowMakesCrossAttentionScoreFree) {
  auto p = LayerParams<double>::create(store, "dec", 4, 6, true);
  randomize(store, rng);
  auto y = random_tensor<double>(rng, {1, 3, 4}, false);
  auto mem = random_tensor<double>(rng, {1, 1, 4}, false);
  std::vector<std::uint8_t> keep(3, 1);
  auto m = causal_mask(keep, 1, 3);
  auto before = decoder_layer(y, y, mem, &m, nullptr, p, opt);
  // Query and key projections of cross-attention only shape scores, which a single key ignores.
  for (auto& x : p.cross->wq.mutable_data()) x *= -3.0;
  for (auto& x : p.cross->wk.mutable_data()) x = 0.25;
  auto after = decoder_layer(y, y, mem, &m, nullptr, p, opt);
  for (std::size_t j = 0; j < before.numel(); ++j)
    EXPECT_NEAR(before.data()[j], after.data()[j], 1e-12);
}

TEST_F(LayerTest, PermutingSourceWithoutPositionsPermutesOutputs) {
  auto p = LayerParams<double>::create(store, "enc", 4, 6, false);
  randomize(store, rng);
  auto table = random_tensor<double>(rng, {6, 4}, false);
  TokenGrid a{{1, 4}, {1, 2, 3, 5}};
  TokenGrid b{{1, 4}, {5, 3, 1, 2}};
  const std::size_t perm[] = {3, 2, 0, 1};  // b[t] = a[perm[t]]
  auto xa = embed(a, table, 0, false);
  auto xb = embed(b, table, 0, false);
  auto ha = encoder_layer(xa, xa, nullptr, p, opt);
  auto hb = encoder_layer(xb, xb, nullptr, p, opt);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(hb.data()[t * 4 + j], ha.data()[perm[t] * 4 + j], 1e-12);
}

TEST_F(LayerTest, WidthMismatchIsAnError) {
  auto p = LayerParams<double>::create(store, "enc", 4, 6, false);
  auto x = random_tensor<double>(rng, {1, 3, 5}, false);
  EXPECT_THROW(encoder_layer(x, x, nullptr, p, opt), DimensionError);
}

TEST_F(LayerTest, DecoderCarriesOneExtraSublayer) {
  auto e = LayerParams<double>::create(store, "e", 4, 6, false);
  auto d = LayerParams<double>::create(store, "d", 4, 6, true);
  EXPECT_FALSE(e.is_decoder());
  EXPECT_TRUE(d.is_decoder());
  EXPECT_EQ(d.norms.size(), e.norms.size() + 1);
}

}  // namespace
}  // namespace dfsq
