#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dfsq/fusion.hpp"

namespace dfsq {

// Mean over valid positions of 1 - cos^2(a_n, b_n). Empty keep means every position is valid.
template <typename T>
Tensor<T> pair_distance(const Tensor<T>& a, const Tensor<T>& b,
                        std::span<const std::uint8_t> keep = {});

// Mean adjacent-pair distance over the backbone states H^1..H^L (aggregation nodes excluded).
template <typename T>
Tensor<T> diversity_loss(const LayerStates<T>& states, std::span<const std::uint8_t> keep = {});

// nll - lambda * (div_enc + div_dec) / 2. Minimizing it rewards diverse layers.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& nll, const Tensor<T>& div_enc, const Tensor<T>& div_dec,
                     double lambda);

struct DiversityReport {
  std::string side;
  std::vector<double> distances;  // D(H^l, H^{l+1}) for l = 1..L-1
  double mean = 0.0;
  // Mean adjacent cos^2 similarity, i.e. 1 - mean.
  double similarity() const { return 1.0 - mean; }
};

template <typename T>
DiversityReport diversity_report(const LayerStates<T>& states, std::span<const std::uint8_t> keep,
                                 std::string side);

}  // namespace dfsq
