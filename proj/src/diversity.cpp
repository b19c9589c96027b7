#include "dfsq/diversity.hpp"

#include "dfsq/errors.hpp"

namespace dfsq {

template <typename T>
Tensor<T> pair_distance(const Tensor<T>& a, const Tensor<T>& b, std::span<const std::uint8_t> keep) {
  if (a.shape() != b.shape()) {
    throw DimensionError("pair_distance shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const std::size_t rows = a.numel() / a.shape().back();
  std::vector<std::uint8_t> k(keep.begin(), keep.end());
  if (k.empty()) k.assign(rows, 1);
  if (k.size() != rows) throw DimensionError("pair_distance: keep size does not match positions");
  auto sim = masked_mean(row_cosine_squared(a, b, k), k);
  return add(Tensor<T>::scalar(T{1}), scale(sim, T{-1}));
}

template <typename T>
Tensor<T> diversity_loss(const LayerStates<T>& states, std::span<const std::uint8_t> keep) {
  const auto& H = states.backbone;
  if (H.size() < 3) throw ConfigError("diversity needs at least 2 backbone layers");
  const std::size_t L = H.size() - 1;
  Tensor<T> acc = pair_distance(H[1], H[2], keep);
  for (std::size_t l = 2; l < L; ++l) acc = add(acc, pair_distance(H[l], H[l + 1], keep));
  return scale(acc, static_cast<T>(1.0 / static_cast<double>(L - 1)));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& nll, const Tensor<T>& div_enc, const Tensor<T>& div_dec,
                     double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be non-negative");
  if (lambda == 0.0) return nll;
  return add(nll, scale(add(div_enc, div_dec), static_cast<T>(-lambda / 2.0)));
}

template <typename T>
DiversityReport diversity_report(const LayerStates<T>& states, std::span<const std::uint8_t> keep,
                                 std::string side) {
  NoGradGuard guard;
  DiversityReport r;
  r.side = std::move(side);
  const auto& H = states.backbone;
  if (H.size() < 3) throw ConfigError("diversity needs at least 2 backbone layers");
  double total = 0.0;
  for (std::size_t l = 1; l + 1 < H.size(); ++l) {
    r.distances.push_back(static_cast<double>(pair_distance(H[l], H[l + 1], keep).item()));
    total += r.distances.back();
  }
  r.mean = total / static_cast<double>(r.distances.size());
  return r;
}

#define DFSQ_INSTANTIATE(T)                                                                      \
  template Tensor<T> pair_distance(const Tensor<T>&, const Tensor<T>&,                          \
                                   std::span<const std::uint8_t>);                             \
  template Tensor<T> diversity_loss(const LayerStates<T>&, std::span<const std::uint8_t>);      \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);  \
  template DiversityReport diversity_report(const LayerStates<T>&,                             \
                                            std::span<const std::uint8_t>, std::string);

DFSQ_INSTANTIATE(float)
DFSQ_INSTANTIATE(double)
DFSQ_INSTANTIATE(long double)

}  // namespace dfsq
