#pragma once

// Dense compute kernels behind the autodiff ops.
//
// Every kernel exists twice: `serial::` is the straightforward reference and
// `omp::` is the fast path, parallel over independent output rows or slices.
// The omp partition does not depend on the thread count, so its results are
// identical for any number of threads. The two variants agree to rounding.
// The unqualified functions in `kernels::` dispatch to the omp variant.

#include <cstddef>
#include <span>

#include "stnas/tensor.hpp"

namespace stnas::kernels {

using In = std::span<const Real>;
using Out = std::span<Real>;

// Shape of a linear-attention call: `batch` x `steps` x `nodes` x `dim`, with
// attention running over `steps` independently for each (batch, node, head).
struct AttentionDims {
  std::size_t batch = 1;
  std::size_t steps = 1;
  std::size_t nodes = 1;
  std::size_t dim = 1;
  std::size_t heads = 1;
};

#define STNAS_KERNEL_DECLS                                                                   \
  /* c[m,n] (+)= a[m,k] * b[k,n] */                                                          \
  void gemm_nn(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate); \
  /* c[m,n] (+)= a[m,k] * b[n,k]^T */                                                        \
  void gemm_nt(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate); \
  /* c[m,n] (+)= a[k,m]^T * b[k,n] */                                                        \
  void gemm_tn(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate); \
  /* y[g] += M x[g] (or M^T x[g]) for each of `groups` blocks of shape nodes x width */     \
  void graph_propagate(std::size_t groups, std::size_t nodes, std::size_t width, In m, In x, \
                       Out y, bool transpose_m);                                            \
  /* dm[i,j] += sum_g sum_c dy[g,i,c] * x[g,j,c] */                                          \
  void graph_outer(std::size_t groups, std::size_t nodes, std::size_t width, In dy, In x,    \
                   Out dm);                                                                  \
  /* y[g,i,c] += sum_t sum_j M_t[i,j] z[g,j,t*width+c]; mats is [count,nodes,nodes] */       \
  void graph_mix(std::size_t groups, std::size_t nodes, std::size_t width, std::size_t count, \
                 In mats, In z, Out y);                                                      \
  /* dz[g,j,t*width+c] += sum_i M_t[i,j] dy[g,i,c] */                                        \
  void graph_mix_transpose(std::size_t groups, std::size_t nodes, std::size_t width,        \
                           std::size_t count, In mats, In dy, Out dz);                       \
  /* dm[i,j] += sum_g sum_c dy[g,i,c] z[g,j,block*width+c] (gradient of matrix `block`) */   \
  void graph_mix_outer(std::size_t groups, std::size_t nodes, std::size_t width,            \
                       std::size_t count, std::size_t block, In dy, In z, Out dm);           \
  void softmax_rows(std::size_t rows, std::size_t cols, In x, Out y);                        \
  void linear_attention_forward(const AttentionDims& d, In q, In k, In v, Out out);          \
  /* accumulates into dq, dk, dv */                                                          \
  void linear_attention_backward(const AttentionDims& d, In q, In k, In v, In dout, Out dq,  \
                                 Out dk, Out dv);

namespace serial {
STNAS_KERNEL_DECLS
}  // namespace serial

namespace omp {
STNAS_KERNEL_DECLS
}  // namespace omp

STNAS_KERNEL_DECLS

#undef STNAS_KERNEL_DECLS

// Global switch for the dispatching entry points. Kernels also fall back to
// serial when already inside a parallel region or when the work is tiny.
void set_parallel(bool enabled) noexcept;
bool parallel_enabled() noexcept;
int max_threads() noexcept;

}  // namespace stnas::kernels
