#include "dfsq/params.hpp"

#include <cmath>

#include "dfsq/errors.hpp"

namespace dfsq {

template <typename T>
Tensor<T> ParamStore<T>::create(const std::string& name, Shape shape, Init init,
                                T identity_scale) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  const std::size_t n = numel(shape);
  std::vector<T> values(n, T{0});
  switch (init) {
    case Init::kXavier: {
      const std::size_t rows = shape.size() >= 2 ? shape[shape.size() - 2] : 1;
      const std::size_t cols = shape.back();
      const double s = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> dist(-s, s);
      for (auto& v : values) v = static_cast<T>(dist(rng_));
      break;
    }
    case Init::kZeros:
      break;
    case Init::kOnes:
      std::fill(values.begin(), values.end(), T{1});
      break;
    case Init::kIdentity: {
      if (shape.size() != 2 || shape[0] != shape[1]) {
        throw DimensionError("identity init needs a square matrix, got " + shape_string(shape));
      }
      for (std::size_t i = 0; i < shape[0]; ++i) values[i * shape[0] + i] = identity_scale;
      break;
    }
  }
  auto t = Tensor<T>::from(std::move(shape), std::move(values), true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, t);
  return t;
}

template <typename T>
Tensor<T> ParamStore<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("no parameter named '" + name + "'");
  return entries_[it->second].second;
}

template <typename T>
std::size_t ParamStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamStore<long double>;

}  // namespace dfsq
