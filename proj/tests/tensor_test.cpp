#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dfsq/errors.hpp"
#include "dfsq/grad_check.hpp"
#include "dfsq/ops.hpp"
#include "test_util.hpp"

namespace dfsq {
namespace {

using testing::random_tensor;
using testing::to_vector;
using TD = Tensor<double>;

TEST(TensorBasics, ShapeMustMatchData) {
  EXPECT_THROW(TD::from({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(TD::from({0}, {}), DimensionError);
  auto t = TD::from({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t.numel(), 4u);
  EXPECT_FALSE(t.has_grad());
}

TEST(Matmul, IdentityTimesColumn) {
  auto a = TD::from({2, 2}, {1, 0, 0, 1});
  auto b = TD::from({2, 1}, {3, 4});
  auto c = matmul(a, b);
  EXPECT_EQ(c.shape(), (Shape{2, 1}));
  EXPECT_EQ(to_vector(c), (std::vector<double>{3, 4}));
}

TEST(Matmul, RowTimesColumn) {
  auto c = matmul(TD::from({1, 2}, {1, 2}), TD::from({2, 1}, {3, 4}));
  EXPECT_EQ(to_vector(c), (std::vector<double>{11}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(TD::zeros({2, 3}), TD::zeros({4, 5}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
    EXPECT_NE(msg.find("[4,5]"), std::string::npos);
  }
}

// Central differences written out directly, independent of grad_check.
TEST(Matmul, GradientsMatchCentralDifferences) {
  std::mt19937_64 rng(42);
  auto a = random_tensor(rng, {4, 5});
  auto b = random_tensor(rng, {5, 3});
  auto w = random_tensor(rng, {12, 1}, false);
  // loss = sum_ij (a b)_ij w_ij
  auto graph = [&] { return matmul(reshape(matmul(a, b), {1, 12}), w); };
  backward(graph());
  auto plain = [&] {
    double s = 0;
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double c = 0;
        for (std::size_t k = 0; k < 5; ++k) c += a.data()[i * 5 + k] * b.data()[k * 3 + j];
        s += c * w.data()[i * 3 + j];
      }
    return s;
  };
  const double eps = 1e-5;
  for (auto* t : {&a, &b}) {
    auto vals = t->mutable_data();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      vals[i] = saved + eps;
      const double up = plain();
      vals[i] = saved - eps;
      const double down = plain();
      vals[i] = saved;
      const double numeric = (up - down) / (2 * eps);
      EXPECT_LT(relative_error(t->grad()[i], numeric), 1e-6) << "element " << i;
    }
  }
}

TEST(Matmul, BatchedAndBroadcastWeightGradients) {
  std::mt19937_64 rng(5);
  auto a = random_tensor(rng, {2, 3, 4});
  auto b = random_tensor(rng, {2, 4, 2});
  auto w = random_tensor(rng, {4, 2});
  auto m = random_tensor(rng, {3, 4});
  std::vector<Tensor<double>> params{a, b, w, m};
  const double err = grad_check(
      [&] {
        auto x = matmul(a, b);                 // batched
        auto y = matmul(a, w);                 // shared weight
        auto z = matmul(m, b);                 // shared left operand
        auto q = matmul_transposed(a, a);      // batched a a^T
        auto r = matmul_transposed(a, m);      // shared right operand
        return add(add(add(sum(x), sum(scale(y, 0.5))), add(sum(z), sum(q))), sum(r));
      },
      params);
  EXPECT_LT(err, 1e-6);
}

TEST(Softmax, UniformRow) {
  auto y = softmax_masked(TD::from({3}, {0, 0, 0}), nullptr);
  for (double v : y.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, SingleUnmaskedPosition) {
  Mask m{{2}, {1, 0}};
  auto y = softmax_masked(TD::from({2}, {5, 5}), &m);
  EXPECT_EQ(to_vector(y), (std::vector<double>{1, 0}));
}

TEST(Softmax, MatchesDirectFormula) {
  auto y = softmax_masked(TD::from({3}, {1, 2, 3}), nullptr);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  EXPECT_NEAR(y.data()[0], std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(y.data()[1], std::exp(2.0) / z, 1e-15);
  EXPECT_NEAR(y.data()[2], std::exp(3.0) / z, 1e-15);
}

TEST(Softmax, FullyMaskedRowIsAnError) {
  Mask m{{1, 3}, {0, 0, 0}};
  EXPECT_THROW(softmax_masked(TD::zeros({2, 3}), &m), NumericalError);
}

TEST(Softmax, PropertyRowsSumToOneAndMaskedAreZero) {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = random_tensor(rng, {2, 3, 4, 7}, false, -5.0, 5.0);
    Mask m{{2, 1, 4, 7}, {}};
    m.keep.resize(numel(m.shape));
    for (std::size_t i = 0; i < m.keep.size(); ++i) m.keep[i] = (i % 7 == 0) || coin(rng);
    auto y = softmax_masked(x, &m);
    for (std::size_t row = 0; row < y.numel() / 7; ++row) {
      double s = 0;
      const std::size_t b = row / 12, q = row % 4;
      for (std::size_t j = 0; j < 7; ++j) {
        const double v = y.data()[row * 7 + j];
        if (!m.keep[(b * 4 + q) * 7 + j]) EXPECT_EQ(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(LayerNorm, ConstantVectorCollapsesToBias) {
  auto y = layer_norm(TD::full({3}, 0.7), TD::full({3}, 1.0), TD::zeros({3}), 1e-6);
  for (double v : y.data()) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  std::mt19937_64 rng(1);
  auto x = random_tensor(rng, {4, 5}, false);
  auto bias = TD::from({5}, {1, 2, 3, 4, 5});
  auto y = layer_norm(x, TD::zeros({5}), bias, 1e-6);
  for (std::size_t i = 0; i < y.numel(); ++i) EXPECT_EQ(y.data()[i], bias.data()[i % 5]);
}

TEST(LayerNorm, MomentsAreStandardized) {
  std::mt19937_64 rng(2);
  auto x = random_tensor(rng, {6, 16}, false);
  // eps far below the row variance so its effect stays under the tolerance
  auto y = layer_norm(x, TD::full({16}, 1.0), TD::zeros({16}), 1e-12);
  for (std::size_t r = 0; r < 6; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 16; ++j) m += y.data()[r * 16 + j];
    m /= 16;
    for (std::size_t j = 0; j < 16; ++j) v += std::pow(y.data()[r * 16 + j] - m, 2);
    v /= 16;
    EXPECT_NEAR(m, 0.0, 1e-6);
    EXPECT_NEAR(v, 1.0, 1e-6);
  }
}

TEST(LayerNorm, ShiftInvariance) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = random_tensor(rng, {3, 8}, false);
    auto shifted = TD::from({3, 8}, to_vector(x));
    for (auto& v : shifted.mutable_data()) v += 3.25 * (trial + 1);
    auto g = TD::full({8}, 1.0);
    auto b = TD::zeros({8});
    auto y1 = layer_norm(x, g, b, 1e-6);
    auto y2 = layer_norm(shifted, g, b, 1e-6);
    for (std::size_t i = 0; i < y1.numel(); ++i) EXPECT_NEAR(y1.data()[i], y2.data()[i], 1e-6);
  }
}

TEST(LayerNorm, DimensionMismatch) {
  EXPECT_THROW(layer_norm(TD::zeros({2, 4}), TD::zeros({3}), TD::zeros({4}), 1e-6),
               DimensionError);
}

TEST(Elementwise, ReluSigmoidConcat) {
  EXPECT_EQ(to_vector(relu(TD::from({3}, {-1, 0, 2}))), (std::vector<double>{0, 0, 2}));
  EXPECT_EQ(sigmoid(TD::scalar(0.0)).item(), 0.5);
  std::vector<TD> parts{TD::from({2, 1}, {1, 2}), TD::from({2, 1}, {3, 4})};
  auto c = concat_last<double>(parts);
  EXPECT_EQ(c.shape(), (Shape{2, 2}));
  EXPECT_EQ(to_vector(c), (std::vector<double>{1, 3, 2, 4}));
  std::vector<TD> bad{TD::zeros({2, 1}), TD::zeros({3, 1})};
  EXPECT_THROW(concat_last<double>(bad), DimensionError);
  EXPECT_THROW(add(TD::zeros({2}), TD::zeros({3})), DimensionError);
}

TEST(CosineSquared, ReferenceCases) {
  EXPECT_NEAR(cosine_squared(TD::from({3}, {1, 2, 3}), TD::from({3}, {1, 2, 3})).item(), 1.0,
              1e-15);
  EXPECT_EQ(cosine_squared(TD::from({2}, {1, 0}), TD::from({2}, {0, 1})).item(), 0.0);
  // opposite directions count as linearly dependent
  EXPECT_EQ(cosine_squared(TD::from({2}, {1, 0}), TD::from({2}, {-1, 0})).item(), 1.0);
  EXPECT_THROW(cosine_squared(TD::from({2}, {0, 0}), TD::from({2}, {1, 0})), NumericalError);
}

TEST(CosineSquared, SymmetricAndScaleInvariant) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> cdist(-3, 3);
  for (int trial = 0; trial < 100; ++trial) {
    auto u = random_tensor(rng, {6}, false);
    auto v = random_tensor(rng, {6}, false);
    double c = cdist(rng);
    if (std::abs(c) < 1e-3) c = 1.5;
    const double uv = cosine_squared(u, v).item();
    EXPECT_NEAR(uv, cosine_squared(v, u).item(), 1e-9);
    EXPECT_NEAR(uv, cosine_squared(scale(u, c), v).item(), 1e-9);
    EXPECT_GE(uv, 0.0);
    EXPECT_LE(uv, 1.0 + 1e-12);
  }
}

TEST(CrossEntropy, UniformLogits) {
  auto logits = TD::zeros({1, 2, 4});
  std::vector<int> tgt{1, 3};
  std::vector<std::uint8_t> keep{1, 1};
  EXPECT_NEAR(cross_entropy(logits, tgt, keep).item(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, ConfidentCorrectLogits) {
  auto logits = TD::from({1, 1, 3}, {0, 50, 0});
  std::vector<int> tgt{1};
  std::vector<std::uint8_t> keep{1};
  EXPECT_NEAR(cross_entropy(logits, tgt, keep).item(), 0.0, 1e-12);
}

TEST(CrossEntropy, MatchesDirectLogSoftmaxAndSkipsPads) {
  std::mt19937_64 rng(6);
  auto logits = random_tensor(rng, {2, 3, 5}, false, -3.0, 3.0);
  std::vector<int> tgt{0, 4, 2, 1, 3, 0};
  std::vector<std::uint8_t> keep{1, 1, 0, 1, 1, 0};
  double total = 0;
  int n = 0;
  for (std::size_t r = 0; r < 6; ++r) {
    if (!keep[r]) continue;
    double z = 0;
    for (std::size_t j = 0; j < 5; ++j) z += std::exp(logits.data()[r * 5 + j]);
    total += -(logits.data()[r * 5 + tgt[r]] - std::log(z));
    ++n;
  }
  EXPECT_NEAR(cross_entropy(logits, tgt, keep).item(), total / n, 1e-8);
  std::vector<std::uint8_t> none(6, 0);
  EXPECT_THROW(cross_entropy(logits, tgt, none), NumericalError);
}

TEST(Backward, RejectsNonScalarLoss) {
  auto x = TD::zeros({2}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), DimensionError);
}

TEST(Backward, TapeIsTopologicalAndGradsAccumulateOnce) {
  auto x = TD::from({2}, {1.0, 2.0}, true);
  auto y = add(x, x);          // x used twice
  auto z = sum(add(y, scale(x, 3.0)));
  auto tape = build_tape(z);
  for (std::size_t i = 0; i < tape.size(); ++i)
    for (auto& p : tape[i]->parents)
      for (std::size_t j = i; j < tape.size(); ++j) EXPECT_NE(tape[j].get(), p.get());
  backward(z);
  EXPECT_EQ(to_vector(Tensor<double>::from({2}, {x.grad()[0], x.grad()[1]})),
            (std::vector<double>{5, 5}));
}

TEST(Backward, DeterministicForFixedGraph) {
  std::mt19937_64 r1(8), r2(8);
  auto run = [](std::mt19937_64& rng) {
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {4, 4});
    auto loss = sum(layer_norm(relu(matmul(a, b)), Tensor<double>::full({4}, 1.0, true),
                               Tensor<double>::zeros({4}, true), 1e-6));
    backward(loss);
    return std::make_pair(to_vector(loss), std::vector<double>(a.grad().begin(), a.grad().end()));
  };
  EXPECT_EQ(run(r1), run(r2));
}

TEST(GradCheck, SquareFunction) {
  auto theta = TD::scalar(3.0, true);
  std::vector<TD> params{theta};
  auto square = [&] { return sum(matmul(reshape(theta, {1, 1}), reshape(theta, {1, 1}))); };
  EXPECT_LT(grad_check(square, params), 1e-8);
}

TEST(GradCheck, ConstantFunctionHasZeroError) {
  auto theta = TD::from({3}, {1, 2, 3}, true);
  std::vector<TD> params{theta};
  EXPECT_EQ(grad_check([&] { return scale(sum(theta), 0.0); }, params), 0.0);
}

// Every differentiable op against central differences on random inputs in [-1, 1].
TEST(GradCheck, EveryOpMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  auto x = random_tensor(rng, {2, 3, 4});
  auto y = random_tensor(rng, {2, 3, 4});
  auto w = random_tensor(rng, {4, 4});
  auto bias = random_tensor(rng, {4});
  auto gain = random_tensor(rng, {4});
  auto table = random_tensor(rng, {6, 4});
  TokenGrid tokens{{2, 3}, {1, 5, 0, 2, 2, 4}};
  std::vector<int> targets{0, 1, 2, 3, 1, 0};
  std::vector<std::uint8_t> keep{1, 1, 1, 1, 0, 1};
  Mask mask{{2, 1, 3}, {1, 0, 1, 0, 1, 1}};
  std::vector<NamedTensor> params{{"x", x}, {"y", y}, {"w", w}, {"bias", bias}, {"gain", gain},
                                  {"table", table}};
  auto loss = [&] {
    auto h = add_bias(matmul(x, w), bias);
    auto s = softmax_masked(matmul_transposed(h, y), &mask);       // [2,3,3]
    auto ctx = matmul(s, y);                                        // [2,3,4]
    auto ln = layer_norm(add(ctx, embedding(tokens, table)), gain, bias, 1e-6);
    std::vector<Tensor<double>> parts{sigmoid(ln), scale(relu(x), -0.5)};
    auto cat = concat_last<double>(parts);                          // [2,3,8]
    auto four = reshape(cat, {2, 3, 2, 4});
    auto pooled = mean_rows(transpose12(four));                     // [2,2,4]... rows of t
    auto ce = cross_entropy(matmul(ln, w), targets, keep);
    auto cos = masked_mean(row_cosine_squared(ln, y, keep), keep);
    return add(add(ce, cos), mean(pooled));
  };
  auto report = grad_check_report(loss, params);
  for (const auto& e : report.per_tensor) EXPECT_LT(e.max_rel_error, 1e-4) << e.name;
}

}  // namespace
}  // namespace dfsq
