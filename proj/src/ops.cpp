#include "dfsq/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dfsq/errors.hpp"
#include "dfsq/kernels.hpp"

namespace dfsq {

namespace kn = kernels::active;

namespace {

template <typename T>
TensorNode<T>* parent_needing_grad(TensorNode<T>& out, std::size_t i) {
  auto& p = out.parents[i];
  return p->requires_grad ? p.get() : nullptr;
}

Shape leading(const Shape& s, std::size_t keep_tail) {
  return Shape(s.begin(), s.end() - static_cast<std::ptrdiff_t>(keep_tail));
}

void require_rank(const Shape& s, std::size_t min_rank, const char* op) {
  if (s.size() < min_rank) {
    throw DimensionError(std::string(op) + ": rank " + std::to_string(s.size()) + " below " +
                         std::to_string(min_rank) + " for shape " + shape_string(s));
  }
}

[[noreturn]] void mismatch(const char* op, const Shape& a, const Shape& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                       shape_string(b));
}

// Expand a broadcastable mask to x's full extent.
std::vector<std::uint8_t> expand_mask(const Mask& mask, const Shape& xs) {
  if (mask.shape.size() > xs.size() || numel(mask.shape) != mask.keep.size()) {
    mismatch("softmax_masked mask", mask.shape, xs);
  }
  Shape ms(xs.size() - mask.shape.size(), 1);
  ms.insert(ms.end(), mask.shape.begin(), mask.shape.end());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (ms[i] != 1 && ms[i] != xs[i]) mismatch("softmax_masked mask", mask.shape, xs);
  }
  std::vector<std::size_t> mstride(xs.size(), 0);
  std::size_t s = 1;
  for (std::size_t i = xs.size(); i-- > 0;) {
    mstride[i] = ms[i] == 1 ? 0 : s;
    s *= ms[i];
  }
  const std::size_t total = numel(xs);
  std::vector<std::uint8_t> out(total);
  std::vector<std::size_t> idx(xs.size(), 0);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) off += idx[i] * mstride[i];
    out[flat] = mask.keep[off];
    for (std::size_t i = xs.size(); i-- > 0;) {
      if (++idx[i] < xs[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t n = b.shape().back();
  if (b.shape()[b.rank() - 2] != k) mismatch("matmul", a.shape(), b.shape());

  if (b.rank() == 2) {
    // Weight matrix shared by every leading position: one flat product.
    const std::size_t rows = a.numel() / k;
    Shape out_shape = leading(a.shape(), 1);
    out_shape.push_back(n);
    std::vector<T> out(rows * n);
    kn::gemm_nn(rows, k, n, a.data().data(), b.data().data(), out.data(), false);
    return make_result<T>(std::move(out_shape), std::move(out), {a, b},
                          [rows, k, n](TensorNode<T>& o) {
                            const T* g = o.grad.data();
                            auto* pa = o.parents[0].get();
                            auto* pb = o.parents[1].get();
                            if (pa->requires_grad)
                              kn::gemm_nt(rows, n, k, g, pb->data.data(),
                                          pa->ensure_grad().data(), true);
                            if (pb->requires_grad)
                              kn::gemm_tn(rows, k, n, pa->data.data(), g,
                                          pb->ensure_grad().data(), true);
                          });
  }

  const Shape lead_a = leading(a.shape(), 2);
  const Shape lead_b = leading(b.shape(), 2);
  if (!lead_a.empty() && lead_a != lead_b) mismatch("matmul", a.shape(), b.shape());
  const std::size_t count = numel(lead_b);
  const bool shared_a = lead_a.empty();
  Shape out_shape = lead_b;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(count * m * n);
  kernels::GemmBatch batch{count, shared_a ? 0 : m * k, k * n, m * n};
  kn::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data(), false, batch);
  return make_result<T>(
      std::move(out_shape), std::move(out), {a, b}, [m, k, n, count, shared_a](TensorNode<T>& o) {
        const T* g = o.grad.data();
        auto* pa = o.parents[0].get();
        auto* pb = o.parents[1].get();
        if (pa->requires_grad) {
          T* ga = pa->ensure_grad().data();
          if (shared_a) {
            for (std::size_t p = 0; p < count; ++p)
              kn::gemm_nt(m, n, k, g + p * m * n, pb->data.data() + p * k * n, ga, true);
          } else {
            kn::gemm_nt(m, n, k, g, pb->data.data(), ga, true,
                        kernels::GemmBatch{count, m * n, k * n, m * k});
          }
        }
        if (pb->requires_grad) {
          kn::gemm_tn(m, k, n, pa->data.data(), g, pb->ensure_grad().data(), true,
                      kernels::GemmBatch{count, shared_a ? 0 : m * k, m * n, k * n});
        }
      });
}

template <typename T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a.shape(), 2, "matmul_transposed");
  require_rank(b.shape(), 2, "matmul_transposed");
  const std::size_t m = a.shape()[a.rank() - 2];
  const std::size_t k = a.shape().back();
  const std::size_t n = b.shape()[b.rank() - 2];
  if (b.shape().back() != k) mismatch("matmul_transposed", a.shape(), b.shape());
  const Shape lead_a = leading(a.shape(), 2);
  const Shape lead_b = leading(b.shape(), 2);
  if (!lead_b.empty() && lead_a != lead_b) mismatch("matmul_transposed", a.shape(), b.shape());
  const bool shared_b = lead_b.empty();
  const std::size_t count = numel(lead_a);
  Shape out_shape = lead_a;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(count * m * n);
  kernels::GemmBatch batch{count, m * k, shared_b ? 0 : n * k, m * n};
  kn::gemm_nt(m, k, n, a.data().data(), b.data().data(), out.data(), false, batch);
  return make_result<T>(
      std::move(out_shape), std::move(out), {a, b}, [m, k, n, count, shared_b](TensorNode<T>& o) {
        const T* g = o.grad.data();
        auto* pa = o.parents[0].get();
        auto* pb = o.parents[1].get();
        if (pa->requires_grad) {
          // da = g[m,n] * b[n,k]
          kn::gemm_nn(m, n, k, g, pb->data.data(), pa->ensure_grad().data(), true,
                      kernels::GemmBatch{count, m * n, shared_b ? 0 : n * k, m * k});
        }
        if (pb->requires_grad) {
          // db = g^T[n,m] * a[m,k]
          T* gb = pb->ensure_grad().data();
          if (shared_b) {
            kn::gemm_tn(count * m, n, k, g, pa->data.data(), gb, true);
          } else {
            kn::gemm_tn(m, n, k, g, pa->data.data(), gb, true,
                        kernels::GemmBatch{count, m * n, m * k, n * k});
          }
        }
      });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) mismatch("add", a.shape(), b.shape());
  std::vector<T> out(a.numel());
  const T* x = a.data().data();
  const T* y = b.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result<T>(a.shape(), std::move(out), {a, b}, [](TensorNode<T>& o) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* pn = parent_needing_grad(o, p)) {
        auto& g = pn->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = x.shape().back();
  if (bias.rank() != 1 || bias.dim(0) != n) mismatch("add_bias", x.shape(), bias.shape());
  std::vector<T> out(x.data().begin(), x.data().end());
  const T* bv = bias.data().data();
  const std::size_t rows = out.size() / n;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bv[j];
  return make_result<T>(x.shape(), std::move(out), {x, bias}, [rows, n](TensorNode<T>& o) {
    if (auto* px = parent_needing_grad(o, 0)) {
      auto& g = px->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
    if (auto* pb = parent_needing_grad(o, 1)) {
      auto& g = pb->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < n; ++j) g[j] += o.grad[r * n + j];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.numel());
  const T* v = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * c;
  return make_result<T>(x.shape(), std::move(out), {x}, [c](TensorNode<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * c;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const T* v = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] > T{0} ? v[i] : T{0};
  return make_result<T>(x.shape(), std::move(out), {x}, [](TensorNode<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    const auto& in = o.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > T{0}) g[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  const T* v = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T{1} / (T{1} + std::exp(-v[i]));
  return make_result<T>(x.shape(), std::move(out), {x}, [](TensorNode<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T y = o.data[i];
      g[i] += o.grad[i] * y * (T{1} - y);
    }
  });
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> xs, std::size_t axis) {
  if (xs.empty()) throw DimensionError("concat: no inputs");
  const Shape& s0 = xs[0].shape();
  if (axis >= s0.size()) throw DimensionError("concat: axis out of range for " + shape_string(s0));
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& x : xs) {
    const Shape& s = x.shape();
    if (s.size() != s0.size()) mismatch("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i)
      if (i != axis && s[i] != s0[i]) mismatch("concat", s0, s);
    widths.push_back(s[axis]);
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
  Shape out_shape = s0;
  out_shape[axis] = total;
  std::vector<T> out(outer * total * inner);
  std::size_t offset = 0;
  for (std::size_t p = 0; p < xs.size(); ++p) {
    const std::size_t chunk = widths[p] * inner;
    const T* src = xs[p].data().data();
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(src + o * chunk, src + (o + 1) * chunk, out.begin() + o * total * inner + offset);
    offset += chunk;
  }
  std::vector<Tensor<T>> parents(xs.begin(), xs.end());
  return make_result<T>(std::move(out_shape), std::move(out), std::move(parents),
                        [widths, outer, inner, total](TensorNode<T>& o) {
                          std::size_t off = 0;
                          for (std::size_t p = 0; p < widths.size(); ++p) {
                            const std::size_t chunk = widths[p] * inner;
                            if (auto* pn = parent_needing_grad(o, p)) {
                              auto& g = pn->ensure_grad();
                              for (std::size_t q = 0; q < outer; ++q) {
                                const T* src = o.grad.data() + q * total * inner + off;
                                for (std::size_t i = 0; i < chunk; ++i) g[q * chunk + i] += src[i];
                              }
                            }
                            off += chunk;
                          }
                        });
}

template <typename T>
Tensor<T> concat_last(std::span<const Tensor<T>> xs) {
  if (xs.empty()) throw DimensionError("concat_last: no inputs");
  return concat(xs, xs[0].rank() - 1);
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) mismatch("reshape", x.shape(), shape);
  std::vector<T> out(x.data().begin(), x.data().end());
  return make_result<T>(std::move(shape), std::move(out), {x}, [](TensorNode<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

template <typename T>
Tensor<T> transpose12(const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("transpose12 expects rank 4, got " + shape_string(x.shape()));
  const std::size_t a = x.dim(0), b = x.dim(1), c = x.dim(2), d = x.dim(3);
  std::vector<T> out(x.numel());
  const T* v = x.data().data();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      for (std::size_t k = 0; k < c; ++k)
        std::copy(v + ((i * b + j) * c + k) * d, v + ((i * b + j) * c + k + 1) * d,
                  out.begin() + ((i * c + k) * b + j) * d);
  return make_result<T>({a, c, b, d}, std::move(out), {x}, [a, b, c, d](TensorNode<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j)
        for (std::size_t k = 0; k < c; ++k) {
          const T* src = o.grad.data() + ((i * c + k) * b + j) * d;
          T* dst = g.data() + ((i * b + j) * c + k) * d;
          for (std::size_t e = 0; e < d; ++e) dst[e] += src[e];
        }
  });
}

template <typename T>
Tensor<T> softmax_masked(const Tensor<T>& x, const Mask* mask) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<std::uint8_t> keep;
  if (mask) keep = expand_mask(*mask, x.shape());
  std::vector<T> out(x.numel());
  const std::size_t bad =
      kn::softmax_rows(rows, n, x.data().data(), mask ? keep.data() : nullptr, out.data());
  if (bad != rows) {
    throw NumericalError("softmax_masked: row " + std::to_string(bad) +
                         " has every position masked");
  }
  return make_result<T>(x.shape(), std::move(out), {x}, [rows, n](TensorNode<T>& o) {
    kn::softmax_rows_backward(rows, n, o.data.data(), o.grad.data(),
                              o.parents[0]->ensure_grad().data());
  });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t d = x.shape().back();
  if (gain.rank() != 1 || gain.dim(0) != d) mismatch("layer_norm gain", x.shape(), gain.shape());
  if (bias.rank() != 1 || bias.dim(0) != d) mismatch("layer_norm bias", x.shape(), bias.shape());
  if (!(eps > T{0})) throw DimensionError("layer_norm: eps must be positive");
  const std::size_t rows = x.numel() / d;
  std::vector<T> out(x.numel());
  std::vector<T> xhat(x.numel());
  std::vector<T> rstd(rows);
  kn::layer_norm_rows(rows, d, x.data().data(), gain.data().data(), bias.data().data(), eps,
                      out.data(), xhat.data(), rstd.data());
  return make_result<T>(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, d, xhat = std::move(xhat), rstd = std::move(rstd)](TensorNode<T>& o) {
        auto* px = parent_needing_grad(o, 0);
        auto* pg = parent_needing_grad(o, 1);
        auto* pb = parent_needing_grad(o, 2);
        kn::layer_norm_rows_backward(rows, d, xhat.data(), rstd.data(),
                                     o.parents[1]->data.data(), o.grad.data(),
                                     px ? px->ensure_grad().data() : nullptr,
                                     pg ? pg->ensure_grad().data() : nullptr,
                                     pb ? pb->ensure_grad().data() : nullptr);
      });
}

template <typename T>
Tensor<T> embedding(const TokenGrid& tokens, const Tensor<T>& table) {
  if (table.rank() != 2) throw DimensionError("embedding table must be rank 2");
  if (numel(tokens.shape) != tokens.ids.size()) {
    throw DimensionError("embedding: token grid " + shape_string(tokens.shape) + " holds " +
                         std::to_string(tokens.ids.size()) + " ids");
  }
  const std::size_t vocab = table.dim(0);
  const std::size_t d = table.dim(1);
  for (int id : tokens.ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw DimensionError("embedding: token id " + std::to_string(id) + " outside vocabulary of " +
                           std::to_string(vocab));
    }
  }
  Shape out_shape = tokens.shape;
  out_shape.push_back(d);
  std::vector<T> out(tokens.ids.size() * d);
  const T* tv = table.data().data();
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    const auto row = static_cast<std::size_t>(tokens.ids[i]);
    std::copy(tv + row * d, tv + (row + 1) * d, out.begin() + i * d);
  }
  return make_result<T>(std::move(out_shape), std::move(out), {table},
                        [ids = tokens.ids, d](TensorNode<T>& o) {
                          auto& g = o.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < ids.size(); ++i) {
                            T* dst = g.data() + static_cast<std::size_t>(ids[i]) * d;
                            const T* src = o.grad.data() + i * d;
                            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                          }
                        });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        std::span<const std::uint8_t> keep) {
  const std::size_t v = logits.shape().back();
  const std::size_t rows = logits.numel() / v;
  if (targets.size() != rows || keep.size() != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(rows) + " logit rows but " +
                         std::to_string(targets.size()) + " targets / " +
                         std::to_string(keep.size()) + " mask entries");
  }
  std::size_t count = 0;
  for (auto k : keep) count += k ? 1 : 0;
  if (count == 0) throw NumericalError("cross_entropy: every position is masked");
  std::vector<T> probs(logits.numel(), T{0});
  std::vector<int> tgt(targets.begin(), targets.end());
  std::vector<std::uint8_t> kp(keep.begin(), keep.end());
  const T* x = logits.data().data();
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!kp[r]) continue;
    if (tgt[r] < 0 || static_cast<std::size_t>(tgt[r]) >= v) {
      throw DimensionError("cross_entropy: target id " + std::to_string(tgt[r]) +
                           " outside vocabulary of " + std::to_string(v));
    }
    const T* xr = x + r * v;
    const T mx = *std::max_element(xr, xr + v);
    T s = 0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[r * v + j] = std::exp(xr[j] - mx);
      s += probs[r * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[r * v + j] /= s;
    total += std::log(s) + mx - xr[tgt[r]];
  }
  const T inv = T{1} / static_cast<T>(count);
  return make_result<T>({1}, {total * inv}, {logits},
                        [probs = std::move(probs), tgt = std::move(tgt), kp = std::move(kp), v,
                         inv](TensorNode<T>& o) {
                          auto& g = o.parents[0]->ensure_grad();
                          const T scale_g = o.grad[0] * inv;
                          for (std::size_t r = 0; r < kp.size(); ++r) {
                            if (!kp[r]) continue;
                            for (std::size_t j = 0; j < v; ++j)
                              g[r * v + j] += scale_g * probs[r * v + j];
                            g[r * v + static_cast<std::size_t>(tgt[r])] -= scale_g;
                          }
                        });
}

template <typename T>
Tensor<T> row_cosine_squared(const Tensor<T>& a, const Tensor<T>& b,
                             std::span<const std::uint8_t> keep) {
  if (a.shape() != b.shape()) mismatch("row_cosine_squared", a.shape(), b.shape());
  const std::size_t d = a.shape().back();
  const std::size_t rows = a.numel() / d;
  if (!keep.empty() && keep.size() != rows) {
    throw DimensionError("row_cosine_squared: mask has " + std::to_string(keep.size()) +
                         " entries for " + std::to_string(rows) + " rows");
  }
  Shape out_shape = leading(a.shape(), 1);
  if (out_shape.empty()) out_shape.push_back(1);
  // Per row: dot, |a|^2, |b|^2.
  std::vector<T> stats(rows * 3, T{0});
  std::vector<T> out(rows, T{0});
  const T* x = a.data().data();
  const T* y = b.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    if (!keep.empty() && !keep[r]) continue;
    T dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += x[r * d + j] * y[r * d + j];
      na += x[r * d + j] * x[r * d + j];
      nb += y[r * d + j] * y[r * d + j];
    }
    if (na == T{0} || nb == T{0}) {
      throw NumericalError("cosine_squared: zero vector at row " + std::to_string(r) +
                           " (angle undefined)");
    }
    stats[r * 3] = dot;
    stats[r * 3 + 1] = na;
    stats[r * 3 + 2] = nb;
    // Rounding can push the ratio just past 1.
    out[r] = std::min(T{1}, (dot * dot) / (na * nb));
  }
  return make_result<T>(
      std::move(out_shape), std::move(out), {a, b},
      [stats = std::move(stats), rows, d](TensorNode<T>& o) {
        auto* pa = parent_needing_grad(o, 0);
        auto* pb = parent_needing_grad(o, 1);
        const T* x = o.parents[0]->data.data();
        const T* y = o.parents[1]->data.data();
        T* ga = pa ? pa->ensure_grad().data() : nullptr;
        T* gb = pb ? pb->ensure_grad().data() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          const T na = stats[r * 3 + 1];
          if (na == T{0}) continue;  // skipped row
          const T dot = stats[r * 3];
          const T nb = stats[r * 3 + 2];
          const T c = o.data[r];
          const T g = o.grad[r];
          // d/da (dot^2/(na nb)) = 2 dot b/(na nb) - 2 c a/na
          for (std::size_t j = 0; j < d; ++j) {
            const T xv = x[r * d + j];
            const T yv = y[r * d + j];
            if (ga) ga[r * d + j] += g * (T{2} * dot * yv / (na * nb) - T{2} * c * xv / na);
            if (gb) gb[r * d + j] += g * (T{2} * dot * xv / (na * nb) - T{2} * c * yv / nb);
          }
        }
      });
}

template <typename T>
Tensor<T> cosine_squared(const Tensor<T>& u, const Tensor<T>& v) {
  if (u.rank() != 1 || u.shape() != v.shape()) mismatch("cosine_squared", u.shape(), v.shape());
  return row_cosine_squared(u, v);
}

template <typename T>
Tensor<T> masked_mean(const Tensor<T>& x, std::span<const std::uint8_t> keep) {
  if (keep.size() != x.numel()) {
    throw DimensionError("masked_mean: mask has " + std::to_string(keep.size()) +
                         " entries for tensor " + shape_string(x.shape()));
  }
  std::size_t count = 0;
  T total = 0;
  const T* v = x.data().data();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i]) continue;
    ++count;
    total += v[i];
  }
  if (count == 0) throw NumericalError("masked_mean: no valid positions");
  const T inv = T{1} / static_cast<T>(count);
  return make_result<T>({1}, {total * inv}, {x},
                        [kp = std::vector<std::uint8_t>(keep.begin(), keep.end()),
                         inv](TensorNode<T>& o) {
                          auto& g = o.parents[0]->ensure_grad();
                          for (std::size_t i = 0; i < kp.size(); ++i)
                            if (kp[i]) g[i] += o.grad[0] * inv;
                        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = 0;
  for (T v : x.data()) total += v;
  return make_result<T>({1}, {total}, {x}, [](TensorNode<T>& o) {
    auto& g = o.parents[0]->ensure_grad();
    for (auto& e : g) e += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& x) {
  require_rank(x.shape(), 2, "mean_rows");
  const std::size_t m = x.shape()[x.rank() - 2];
  const std::size_t d = x.shape().back();
  const std::size_t outer = x.numel() / (m * d);
  Shape out_shape = leading(x.shape(), 2);
  out_shape.push_back(d);
  std::vector<T> out(outer * d, T{0});
  const T* v = x.data().data();
  const T inv = T{1} / static_cast<T>(m);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < d; ++j) out[o * d + j] += v[(o * m + i) * d + j];
    for (std::size_t j = 0; j < d; ++j) out[o * d + j] *= inv;
  }
  return make_result<T>(std::move(out_shape), std::move(out), {x},
                        [outer, m, d, inv](TensorNode<T>& o) {
                          auto& g = o.parents[0]->ensure_grad();
                          for (std::size_t q = 0; q < outer; ++q)
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < d; ++j)
                                g[(q * m + i) * d + j] += o.grad[q * d + j] * inv;
                        });
}

#define DFSQ_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> matmul_transposed(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                  \
  template Tensor<T> concat(std::span<const Tensor<T>>, std::size_t);                            \
  template Tensor<T> concat_last(std::span<const Tensor<T>>);                                    \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> transpose12(const Tensor<T>&);                                              \
  template Tensor<T> softmax_masked(const Tensor<T>&, const Mask*);                              \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> embedding(const TokenGrid&, const Tensor<T>&);                              \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>,                       \
                                   std::span<const std::uint8_t>);                               \
  template Tensor<T> cosine_squared(const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> row_cosine_squared(const Tensor<T>&, const Tensor<T>&,                      \
                                        std::span<const std::uint8_t>);                          \
  template Tensor<T> masked_mean(const Tensor<T>&, std::span<const std::uint8_t>);               \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> mean_rows(const Tensor<T>&);

DFSQ_INSTANTIATE_OPS(float)
DFSQ_INSTANTIATE_OPS(double)
DFSQ_INSTANTIATE_OPS(long double)

}  // namespace dfsq
