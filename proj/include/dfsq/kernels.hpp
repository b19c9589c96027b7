#pragma once

// Dense row-major kernels behind the autodiff ops.
//
// Two implementations share every signature: `serial` is the plain reference kept for tests
// and benchmarks; `parallel` splits the outer loop with OpenMP. Both accumulate each output
// element in the same index order, so results do not depend on the thread count.

#include <cstddef>
#include <cstdint>

namespace dfsq::kernels {

struct GemmBatch {
  std::size_t count = 1;
  std::size_t stride_a = 0;  // elements between consecutive A matrices (0 = shared)
  std::size_t stride_b = 0;
  std::size_t stride_c = 0;
};

#define DFSQ_DECLARE_KERNELS                                                                      \
  /* C[M,N] (+)= A[M,K] * B[K,N] */                                                               \
  template <typename T>                                                                           \
  void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,        \
               bool accumulate, GemmBatch batch = {});                                            \
  /* C[M,N] (+)= A[M,K] * B[N,K]^T */                                                             \
  template <typename T>                                                                           \
  void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,        \
               bool accumulate, GemmBatch batch = {});                                            \
  /* C[K,N] (+)= A[M,K]^T * B[M,N] */                                                             \
  template <typename T>                                                                           \
  void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c,        \
               bool accumulate, GemmBatch batch = {});                                            \
  /* Row softmax over kept columns; dropped columns are written as exactly 0.                   \
     Returns the index of the first row with nothing kept, or `rows` when all rows are valid. */  \
  template <typename T>                                                                           \
  std::size_t softmax_rows(std::size_t rows, std::size_t n, const T* x, const std::uint8_t* keep, \
                           T* y);                                                                 \
  /* dx = y * (dy - <dy, y>) per row, accumulated into dx. */                                     \
  template <typename T>                                                                           \
  void softmax_rows_backward(std::size_t rows, std::size_t n, const T* y, const T* dy, T* dx);   \
  /* y = gain * (x - mean) * rstd + bias; writes normalized x and rstd for the backward pass. */  \
  template <typename T>                                                                           \
  void layer_norm_rows(std::size_t rows, std::size_t d, const T* x, const T* gain, const T* bias, \
                       T eps, T* y, T* xhat, T* rstd);                                            \
  /* Accumulates dx (when non-null), dgain and dbias. */                                          \
  template <typename T>                                                                           \
  void layer_norm_rows_backward(std::size_t rows, std::size_t d, const T* xhat, const T* rstd,   \
                                const T* gain, const T* dy, T* dx, T* dgain, T* dbias);

namespace serial {
DFSQ_DECLARE_KERNELS
}  // namespace serial

namespace parallel {
DFSQ_DECLARE_KERNELS
}  // namespace parallel

#undef DFSQ_DECLARE_KERNELS

// Kernels used by the ops.
namespace active = parallel;

// Caps the OpenMP team size used by `parallel` (no-op without OpenMP).
void set_thread_count(int threads);
int thread_count();

}  // namespace dfsq::kernels
