#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dfsq/tensor.hpp"

namespace dfsq {

enum class Init {
  kXavier,    // uniform(-s, s), s = sqrt(6 / (rows + cols))
  kZeros,
  kOnes,
  kIdentity,  // scaled identity, square matrices only
};

// Named trainable tensors in allocation order. Allocation order fixes the random stream,
// so the same seed and the same sequence of create() calls reproduce every value.
template <typename T>
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t seed) : rng_(seed) {}

  Tensor<T> create(const std::string& name, Shape shape, Init init, T identity_scale = T{1});

  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor<T> get(const std::string& name) const;

  std::size_t total_elements() const;
  void zero_grad();

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace dfsq
