#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dfsq/tensor.hpp"

namespace dfsq {

struct NamedTensor {
  std::string name;
  Tensor<double> tensor;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<GradCheckEntry> per_tensor;  // same order as the inputs

  // Entries sorted by error, largest first.
  std::vector<GradCheckEntry> worst(std::size_t n) const;
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Compares reverse-mode gradients of `loss` with central differences
// (f(x+eps) - f(x-eps)) / 2eps for every element of every tensor in `params`.
// `loss` must rebuild its graph from the current parameter values on each call.
GradCheckReport grad_check_report(const std::function<Tensor<double>()>& loss,
                                  std::span<NamedTensor> params, double eps = 1e-5);

// Finite differences taken on an extended-precision copy of the parameters. `values` holds one
// span per checked tensor, in the same order, with the same element counts.
struct ExtendedOracle {
  std::function<long double()> loss;
  std::vector<std::span<long double>> values;
};

// Same comparison, but the central differences come from `oracle` instead of `loss`. The
// analytic gradients are still the 64-bit ones. Cancellation in (f(x+eps) - f(x-eps)) costs
// about one ulp of f per element, which at 64-bit is enough to fail 1e-4 on tiny gradients.
GradCheckReport grad_check_report(const std::function<Tensor<double>()>& loss,
                                  std::span<NamedTensor> params, const ExtendedOracle& oracle,
                                  double eps = 1e-5);

double grad_check(const std::function<Tensor<double>()>& loss, std::span<Tensor<double>> params,
                  double eps = 1e-5);

}  // namespace dfsq
