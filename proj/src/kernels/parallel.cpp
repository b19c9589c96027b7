#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dfsq/kernels.hpp"

namespace dfsq::kernels {

namespace {
// Below this many multiply-adds a team costs more than it saves.
constexpr std::size_t kParallelWork = std::size_t{1} << 15;
}  // namespace

void set_thread_count(int threads) {
#ifdef _OPENMP
  omp_set_num_threads(std::max(1, threads));
#else
  (void)threads;
#endif
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace parallel {

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate, GemmBatch batch) {
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(batch.count * m);
  const bool go_wide = batch.count * m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (go_wide)
  for (std::ptrdiff_t idx = 0; idx < rows; ++idx) {
    const std::size_t p = static_cast<std::size_t>(idx) / m;
    const std::size_t i = static_cast<std::size_t>(idx) % m;
    const T* ar = a + p * batch.stride_a + i * k;
    const T* bp = b + p * batch.stride_b;
    T* cr = c + p * batch.stride_c + i * n;
    if (!accumulate) std::fill(cr, cr + n, T{0});
    for (std::size_t q = 0; q < k; ++q) {
      const T av = ar[q];
      const T* br = bp + q * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate, GemmBatch batch) {
  // Transpose B so the inner loop runs over contiguous output columns.
  const std::size_t b_mats = batch.stride_b == 0 ? 1 : batch.count;
  std::vector<T> bt(b_mats * k * n);
  for (std::size_t p = 0; p < b_mats; ++p) {
    const T* bp = b + p * batch.stride_b;
    T* tp = bt.data() + p * k * n;
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t q = 0; q < k; ++q) tp[q * n + j] = bp[j * k + q];
  }
  GemmBatch tb = batch;
  tb.stride_b = batch.stride_b == 0 ? 0 : k * n;
  gemm_nn(m, k, n, a, bt.data(), c, accumulate, tb);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate, GemmBatch batch) {
  const std::ptrdiff_t rows = static_cast<std::ptrdiff_t>(batch.count * k);
  const bool go_wide = batch.count * m * k * n >= kParallelWork;
#pragma omp parallel for schedule(static) if (go_wide)
  for (std::ptrdiff_t idx = 0; idx < rows; ++idx) {
    const std::size_t p = static_cast<std::size_t>(idx) / k;
    const std::size_t q = static_cast<std::size_t>(idx) % k;
    const T* ap = a + p * batch.stride_a;
    const T* bp = b + p * batch.stride_b;
    T* cr = c + p * batch.stride_c + q * n;
    if (!accumulate) std::fill(cr, cr + n, T{0});
    for (std::size_t i = 0; i < m; ++i) {
      const T av = ap[i * k + q];
      const T* br = bp + i * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

template <typename T>
std::size_t softmax_rows(std::size_t rows, std::size_t n, const T* x, const std::uint8_t* keep,
                         T* y) {
  std::size_t bad = rows;
  const bool go_wide = rows * n >= kParallelWork / 8;
#pragma omp parallel for schedule(static) reduction(min : bad) if (go_wide)
  for (std::ptrdiff_t rr = 0; rr < static_cast<std::ptrdiff_t>(rows); ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const T* xr = x + r * n;
    const std::uint8_t* kr = keep ? keep + r * n : nullptr;
    T* yr = y + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (kr && !kr[j]) continue;
      any = true;
      mx = std::max(mx, xr[j]);
    }
    if (!any) {
      bad = std::min(bad, r);
      continue;
    }
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (kr && !kr[j]) {
        yr[j] = 0;
        continue;
      }
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= sum;
  }
  return bad;
}

template <typename T>
void softmax_rows_backward(std::size_t rows, std::size_t n, const T* y, const T* dy, T* dx) {
  const bool go_wide = rows * n >= kParallelWork / 8;
#pragma omp parallel for schedule(static) if (go_wide)
  for (std::ptrdiff_t rr = 0; rr < static_cast<std::ptrdiff_t>(rows); ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const T* yr = y + r * n;
    const T* gr = dy + r * n;
    T dot = 0;
    for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
    T* xr = dx + r * n;
    for (std::size_t j = 0; j < n; ++j) xr[j] += yr[j] * (gr[j] - dot);
  }
}

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t d, const T* x, const T* gain, const T* bias,
                     T eps, T* y, T* xhat, T* rstd) {
  const bool go_wide = rows * d >= kParallelWork / 8;
#pragma omp parallel for schedule(static) if (go_wide)
  for (std::ptrdiff_t rr = 0; rr < static_cast<std::ptrdiff_t>(rows); ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const T* xr = x + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    T* hr = xhat + r * d;
    T* yr = y + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * rs;
      yr[j] = gain[j] * hr[j] + bias[j];
    }
  }
}

template <typename T>
void layer_norm_rows_backward(std::size_t rows, std::size_t d, const T* xhat, const T* rstd,
                              const T* gain, const T* dy, T* dx, T* dgain, T* dbias) {
  // Parameter grads reduce over rows; kept sequential for a fixed summation order.
  if (dgain || dbias) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* hr = xhat + r * d;
      const T* gr = dy + r * d;
      if (dgain) {
#pragma omp simd
        for (std::size_t j = 0; j < d; ++j) dgain[j] += gr[j] * hr[j];
      }
      if (dbias) {
#pragma omp simd
        for (std::size_t j = 0; j < d; ++j) dbias[j] += gr[j];
      }
    }
  }
  if (!dx) return;
  const bool go_wide = rows * d >= kParallelWork / 8;
#pragma omp parallel for schedule(static) if (go_wide)
  for (std::ptrdiff_t rr = 0; rr < static_cast<std::ptrdiff_t>(rows); ++rr) {
    const std::size_t r = static_cast<std::size_t>(rr);
    const T* hr = xhat + r * d;
    const T* gr = dy + r * d;
    T mean_g = 0;
    T mean_gh = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T g = gr[j] * gain[j];
      mean_g += g;
      mean_gh += g * hr[j];
    }
    mean_g /= static_cast<T>(d);
    mean_gh /= static_cast<T>(d);
    T* xr = dx + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      const T g = gr[j] * gain[j];
      xr[j] += rstd[r] * (g - mean_g - hr[j] * mean_gh);
    }
  }
}

#define DFSQ_INSTANTIATE(T)                                                                        \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool,   \
                           GemmBatch);                                                             \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool,   \
                           GemmBatch);                                                             \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*, bool,   \
                           GemmBatch);                                                             \
  template std::size_t softmax_rows<T>(std::size_t, std::size_t, const T*, const std::uint8_t*,   \
                                       T*);                                                        \
  template void softmax_rows_backward<T>(std::size_t, std::size_t, const T*, const T*, T*);       \
  template void layer_norm_rows<T>(std::size_t, std::size_t, const T*, const T*, const T*, T, T*, \
                                   T*, T*);                                                        \
  template void layer_norm_rows_backward<T>(std::size_t, std::size_t, const T*, const T*,         \
                                            const T*, const T*, T*, T*, T*);

DFSQ_INSTANTIATE(float)
DFSQ_INSTANTIATE(double)
DFSQ_INSTANTIATE(long double)

}  // namespace parallel
}  // namespace dfsq::kernels
