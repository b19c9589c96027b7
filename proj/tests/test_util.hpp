#pragma once

#include <random>
#include <vector>

#include "dfsq/tensor.hpp"

namespace dfsq::testing {

template <typename T = double>
Tensor<T> random_tensor(std::mt19937_64& rng, Shape shape, bool requires_grad = true, T lo = -1,
                        T hi = 1) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(numel(shape));
  for (auto& x : v) x = static_cast<T>(dist(rng));
  return Tensor<T>::from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
std::vector<T> to_vector(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace dfsq::testing
