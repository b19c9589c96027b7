#include "dfsq/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "dfsq/errors.hpp"

namespace dfsq {

std::vector<GradCheckEntry> GradCheckReport::worst(std::size_t n) const {
  auto sorted = per_tensor;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return a.max_rel_error > b.max_rel_error;
  });
  if (sorted.size() > n) sorted.resize(n);
  return sorted;
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

void analytic_grads(const std::function<Tensor<double>()>& loss,
                                   std::span<NamedTensor> params,
                                   std::vector<std::vector<double>>& out) {
  for (auto& p : params) {
    if (!p.tensor.requires_grad()) {
      throw ConfigError("grad_check: tensor '" + p.name + "' is not trainable");
    }
    p.tensor.zero_grad();
  }
  auto value = loss();
  if (value.numel() != 1) throw DimensionError("grad_check: loss is not a scalar");
  backward(value);
  for (auto& p : params) {
    out.push_back(p.tensor.has_grad()
                      ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
                      : std::vector<double>(p.tensor.numel(), 0.0));
  }
}

// numeric(t, i) returns the central difference for element i of tensor t.
template <typename Numeric>
GradCheckReport compare(std::span<NamedTensor> params,
                        const std::vector<std::vector<double>>& analytic, Numeric numeric) {
  GradCheckReport report;
  for (std::size_t t = 0; t < params.size(); ++t) {
    GradCheckEntry entry;
    entry.name = params[t].name;
    for (std::size_t i = 0; i < analytic[t].size(); ++i) {
      const double n = numeric(t, i);
      const double err = relative_error(analytic[t][i], n);
      if (!std::isfinite(err)) {
        throw NumericalError("grad_check: non-finite comparison in '" + entry.name + "'");
      }
      if (err > entry.max_rel_error || i == 0) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = analytic[t][i];
        entry.numeric = n;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.per_tensor.push_back(std::move(entry));
  }
  return report;
}

}  // namespace

GradCheckReport grad_check_report(const std::function<Tensor<double>()>& loss,
                                  std::span<NamedTensor> params, double eps) {
  std::vector<std::vector<double>> analytic;
  analytic_grads(loss, params, analytic);
  auto evaluate = [&loss] {
    NoGradGuard guard;
    return loss().item();
  };
  return compare(params, analytic, [&](std::size_t t, std::size_t i) {
    auto values = params[t].tensor.mutable_data();
    const double saved = values[i];
    values[i] = saved + eps;
    const double up = evaluate();
    values[i] = saved - eps;
    const double down = evaluate();
    values[i] = saved;
    return (up - down) / (2.0 * eps);
  });
}

GradCheckReport grad_check_report(const std::function<Tensor<double>()>& loss,
                                  std::span<NamedTensor> params, const ExtendedOracle& oracle,
                                  double eps) {
  if (oracle.values.size() != params.size()) {
    throw DimensionError("grad_check: oracle has " + std::to_string(oracle.values.size()) +
                         " tensors, expected " + std::to_string(params.size()));
  }
  for (std::size_t t = 0; t < params.size(); ++t) {
    if (oracle.values[t].size() != params[t].tensor.numel()) {
      throw DimensionError("grad_check: oracle size mismatch for '" + params[t].name + "'");
    }
  }
  std::vector<std::vector<double>> analytic;
  analytic_grads(loss, params, analytic);
  const long double h = eps;
  return compare(params, analytic, [&](std::size_t t, std::size_t i) {
    auto& v = oracle.values[t][i];
    const long double saved = v;
    v = saved + h;
    const long double up = oracle.loss();
    v = saved - h;
    const long double down = oracle.loss();
    v = saved;
    return static_cast<double>((up - down) / (2.0L * h));
  });
}

double grad_check(const std::function<Tensor<double>()>& loss, std::span<Tensor<double>> params,
                  double eps) {
  std::vector<NamedTensor> named;
  named.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    named.push_back({"param" + std::to_string(i), params[i]});
  return grad_check_report(loss, named, eps).max_rel_error;
}

}  // namespace dfsq
