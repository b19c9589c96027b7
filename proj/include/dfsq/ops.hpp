#pragma once

#include <span>
#include <vector>

#include "dfsq/tensor.hpp"

namespace dfsq {

// Token ids with their shape, row-major.
struct TokenGrid {
  Shape shape;
  std::vector<int> ids;
};

// a[..,m,k] x b[..,k,n]. Leading extents must match, or one operand must be a plain matrix.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a[..,m,k] x b[..,n,k]^T.
template <typename T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// x[..,n] + bias[n]
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> xs, std::size_t axis);

template <typename T>
Tensor<T> concat_last(std::span<const Tensor<T>> xs);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

// [a,b,c,d] -> [a,c,b,d]
template <typename T>
Tensor<T> transpose12(const Tensor<T>& x);

// Softmax over the last axis. `mask` (nullable) broadcasts to x: equal rank after left-padding,
// each extent 1 or equal. Masked entries come out exactly 0. A row with nothing kept throws.
template <typename T>
Tensor<T> softmax_masked(const Tensor<T>& x, const Mask* mask);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

// Row lookup: out[..., :] = table[id, :].
template <typename T>
Tensor<T> embedding(const TokenGrid& tokens, const Tensor<T>& table);

// Mean token NLL of logits[..,V] over positions where keep != 0.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> keep);

// (u.v)^2 / (|u|^2 |v|^2) for two vectors of equal length.
template <typename T>
Tensor<T> cosine_squared(const Tensor<T>& u, const Tensor<T>& v);

// Row-wise cos^2 over the last axis; rows with keep == 0 (when given) yield 0 and are not checked.
template <typename T>
Tensor<T> row_cosine_squared(const Tensor<T>& a, const Tensor<T>& b,
                             std::span<const std::uint8_t> keep = {});

// Mean over entries with keep != 0.
template <typename T>
Tensor<T> masked_mean(const Tensor<T>& x, std::span<const std::uint8_t> keep);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// x[..,m,d] -> mean over m -> [..,d]
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x);

}  // namespace dfsq
