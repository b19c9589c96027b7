#include <cmath>
#include <limits>

#include "dfsq/kernels.hpp"

namespace dfsq::kernels::serial {

template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate, GemmBatch batch) {
  for (std::size_t p = 0; p < batch.count; ++p) {
    const T* ap = a + p * batch.stride_a;
    const T* bp = b + p * batch.stride_b;
    T* cp = c + p * batch.stride_c;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T s = accumulate ? cp[i * n + j] : T{0};
        for (std::size_t q = 0; q < k; ++q) s += ap[i * k + q] * bp[q * n + j];
        cp[i * n + j] = s;
      }
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate, GemmBatch batch) {
  for (std::size_t p = 0; p < batch.count; ++p) {
    const T* ap = a + p * batch.stride_a;
    const T* bp = b + p * batch.stride_b;
    T* cp = c + p * batch.stride_c;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T s = accumulate ? cp[i * n + j] : T{0};
        for (std::size_t q = 0; q < k; ++q) s += ap[i * k + q] * bp[j * k + q];
        cp[i * n + j] = s;
      }
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,
             bool accumulate, GemmBatch batch) {
  for (std::size_t p = 0; p < batch.count; ++p) {
    const T* ap = a + p * batch.stride_a;
    const T* bp = b + p * batch.stride_b;
    T* cp = c + p * batch.stride_c;
    for (std::size_t q = 0; q < k; ++q) {
      for (std::size_t j = 0; j < n; ++j) {
        T s = accumulate ? cp[q * n + j] : T{0};
        for (std::size_t i = 0; i < m; ++i) s += ap[i * k + q] * bp[i * n + j];
        cp[q * n + j] = s;
      }
    }
  }
}

template <typename T>
std::size_t softmax_rows(std::size_t rows, std::size_t n, const T* x, const std::uint8_t* keep,
                         T* y) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * n;
    const std::uint8_t* kr = keep ? keep + r * n : nullptr;
    T* yr = y + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (kr && !kr[j]) continue;
      any = true;
      if (xr[j] > mx) mx = xr[j];
    }
    if (!any) return r;
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
  return rows;
}

template <typename T>
void softmax_rows_backward(std::size_t rows, std::size_t n, const T* y, const T* dy, T* dx) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y + r * n;
    const T* gr = dy + r * n;
    T dot = 0;
    for (std::size_t j = 0; j < n; ++j) dot += yr[j] * gr[j];
    for (std::size_t j = 0; j < n; ++j) dx[r * n + j] += yr[j] * (gr[j] - dot);
  }
}

template <typename T>
void layer_norm_rows(std::size_t rows, std::size_t d, const T* x, const T* gain, const T* bias,
                     T eps, T* y, T* xhat, T* rstd) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    T mean = 0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<T>(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mean) * rs;
      xhat[r * d + j] = h;
      y[r * d + j] = gain[j] * h + bias[j];
    }
  }
}

template <typename T>
void layer_norm_rows_backward(std::size_t rows, std::size_t d, const T* xhat, const T* rstd,
                              const T* gain, const T* dy, T* dx, T* dgain, T* dbias) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* hr = xhat + r * d;
    const T* gr = dy + r * d;
    if (dgain || dbias) {
      for (std::size_t j = 0; j < d; ++j) {
        if (dgain) dgain[j] += gr[j] * hr[j];
        if (dbias) dbias[j] += gr[j];
      }
    }
    if (!dx) continue;
    T mean_g = 0;
    T mean_gh = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const T g = gr[j] * gain[j];
      mean_g += g;
      mean_gh += g * hr[j];
    }
    mean_g /= static_cast<T>(d);
    mean_gh /= static_cast<T>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const T g = gr[j] * gain[j];
      dx[r * d + j] += rstd[r] * (g - mean_g - hr[j] * mean_gh);
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

}  // namespace dfsq::kernels::serial
