#include "stnas/kernels.hpp"

#include <algorithm>
#include <array>
#include <utility>
#include <atomic>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stnas::kernels {

namespace {

std::atomic<bool> g_parallel{true};

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1u << 15;

bool use_parallel(std::size_t work) {
#ifdef _OPENMP
  return g_parallel.load(std::memory_order_relaxed) && work >= kParallelWork &&
         !omp_in_parallel() && omp_get_max_threads() > 1;
#else
  (void)work;
  return false;
#endif
}

inline std::size_t att_index(const AttentionDims& d, std::size_t b, std::size_t t, std::size_t n) {
  return ((b * d.steps + t) * d.nodes + n) * d.dim;
}

// One (batch, node, head) slice of linear attention. The serial reference uses
// these for every width; the parallel version uses them for head widths
// without a fixed-size kernel.
void attention_slice_forward(const AttentionDims& d, std::size_t b, std::size_t n, std::size_t h,
                             In q, In k, In v, Out out, std::vector<Real>& state) {
  const std::size_t dh = d.dim / d.heads;
  const std::size_t off = h * dh;
  state.assign(dh * dh + dh, Real(0));
  Real* kv = state.data();
  Real* z = kv + dh * dh;
  for (std::size_t t = 0; t < d.steps; ++t) {
    const Real* kt = k.data() + att_index(d, b, t, n) + off;
    const Real* vt = v.data() + att_index(d, b, t, n) + off;
    for (std::size_t i = 0; i < dh; ++i) {
      z[i] += kt[i];
      for (std::size_t j = 0; j < dh; ++j) kv[i * dh + j] += kt[i] * vt[j];
    }
  }
  for (std::size_t t = 0; t < d.steps; ++t) {
    const Real* qt = q.data() + att_index(d, b, t, n) + off;
    Real* ot = out.data() + att_index(d, b, t, n) + off;
    Real den = 0;
    for (std::size_t i = 0; i < dh; ++i) den += qt[i] * z[i];
    for (std::size_t j = 0; j < dh; ++j) ot[j] = 0;
    for (std::size_t i = 0; i < dh; ++i)
      for (std::size_t j = 0; j < dh; ++j) ot[j] += qt[i] * kv[i * dh + j];
    for (std::size_t j = 0; j < dh; ++j) ot[j] /= den;
  }
}

void attention_slice_backward(const AttentionDims& d, std::size_t b, std::size_t n, std::size_t h,
                              In q, In k, In v, In dout, Out dq, Out dk, Out dv,
                              std::vector<Real>& state) {
  const std::size_t dh = d.dim / d.heads;
  const std::size_t off = h * dh;
  state.assign(2 * (dh * dh + dh) + dh, Real(0));
  Real* kv = state.data();
  Real* z = kv + dh * dh;
  Real* dkv = z + dh;
  Real* dz = dkv + dh * dh;
  Real* out = dz + dh;
  for (std::size_t t = 0; t < d.steps; ++t) {
    const Real* kt = k.data() + att_index(d, b, t, n) + off;
    const Real* vt = v.data() + att_index(d, b, t, n) + off;
    for (std::size_t i = 0; i < dh; ++i) {
      z[i] += kt[i];
      for (std::size_t j = 0; j < dh; ++j) kv[i * dh + j] += kt[i] * vt[j];
    }
  }
  for (std::size_t t = 0; t < d.steps; ++t) {
    const std::size_t base = att_index(d, b, t, n) + off;
    const Real* qt = q.data() + base;
    const Real* gt = dout.data() + base;
    Real den = 0;
    for (std::size_t i = 0; i < dh; ++i) den += qt[i] * z[i];
    for (std::size_t j = 0; j < dh; ++j) out[j] = 0;
    for (std::size_t i = 0; i < dh; ++i)
      for (std::size_t j = 0; j < dh; ++j) out[j] += qt[i] * kv[i * dh + j];
    Real g_dot_out = 0;
    for (std::size_t j = 0; j < dh; ++j) {
      out[j] /= den;
      g_dot_out += gt[j] * out[j];
    }
    // out = num / den  =>  dnum = g / den, dden = -(g . out) / den
    const Real inv_den = Real(1) / den;
    const Real dden = -g_dot_out * inv_den;
    Real* dqt = dq.data() + base;
    for (std::size_t i = 0; i < dh; ++i) {
      Real acc = z[i] * dden;
      for (std::size_t j = 0; j < dh; ++j) acc += kv[i * dh + j] * gt[j] * inv_den;
      dqt[i] += acc;
      dz[i] += qt[i] * dden;
      for (std::size_t j = 0; j < dh; ++j) dkv[i * dh + j] += qt[i] * gt[j] * inv_den;
    }
  }
  for (std::size_t t = 0; t < d.steps; ++t) {
    const std::size_t base = att_index(d, b, t, n) + off;
    const Real* kt = k.data() + base;
    const Real* vt = v.data() + base;
    Real* dkt = dk.data() + base;
    Real* dvt = dv.data() + base;
    for (std::size_t i = 0; i < dh; ++i) {
      Real acc = dz[i];
      for (std::size_t j = 0; j < dh; ++j) acc += dkv[i * dh + j] * vt[j];
      dkt[i] += acc;
    }
    for (std::size_t j = 0; j < dh; ++j) {
      Real acc = 0;
      for (std::size_t i = 0; i < dh; ++i) acc += dkv[i * dh + j] * kt[i];
      dvt[j] += acc;
    }
  }
}

void softmax_row(std::size_t cols, const Real* x, Real* y) {
  Real hi = x[0];
  for (std::size_t j = 1; j < cols; ++j) hi = std::max(hi, x[j]);
  Real total = 0;
  for (std::size_t j = 0; j < cols; ++j) {
    y[j] = std::exp(x[j] - hi);
    total += y[j];
  }
  for (std::size_t j = 0; j < cols; ++j) y[j] /= total;
}

template <std::size_t W>
using Lane = Eigen::Matrix<Real, static_cast<int>(W), 1>;
template <std::size_t W>
using LaneMap = Eigen::Map<Lane<W>>;
template <std::size_t W>
using ConstLaneMap = Eigen::Map<const Lane<W>>;

// y[i, :] += sum_t sum_j M_t[i, j] z[j, t*width : (t+1)*width] for one group.
// W > 0 fixes the width at compile time; W == 0 reads it from `width`.
template <std::size_t W>
void mix_group(std::size_t nodes, std::size_t width, std::size_t count, const Real* mats,
               const Real* z, Real* y) {
  if constexpr (W == 0) {
    const std::size_t zrow = width * count;
    for (std::size_t i = 0; i < nodes; ++i) {
      Real* yi = y + i * width;
      for (std::size_t t = 0; t < count; ++t) {
        const Real* mt = mats + t * nodes * nodes + i * nodes;
        for (std::size_t j = 0; j < nodes; ++j) {
          const Real mij = mt[j];
          const Real* zj = z + j * zrow + t * width;
          for (std::size_t c = 0; c < width; ++c) yi[c] += mij * zj[c];
        }
      }
    }
  } else {
    const std::size_t zrow = W * count;
    for (std::size_t i = 0; i < nodes; ++i) {
      Lane<W> acc = LaneMap<W>(y + i * W);
      for (std::size_t t = 0; t < count; ++t) {
        const Real* mt = mats + t * nodes * nodes + i * nodes;
        for (std::size_t j = 0; j < nodes; ++j) acc += mt[j] * ConstLaneMap<W>(z + j * zrow + t * W);
      }
      LaneMap<W> out(y + i * W);
      out = acc;
    }
  }
}

// dz[j, t*width + c] += sum_i M_t[i, j] dy[i, c] for one group.
template <std::size_t W>
void mix_group_transpose(std::size_t nodes, std::size_t width, std::size_t count, const Real* mats,
                         const Real* dy, Real* dz) {
  const std::size_t w = W ? W : width;
  const std::size_t zrow = w * count;
  for (std::size_t j = 0; j < nodes; ++j) {
    for (std::size_t t = 0; t < count; ++t) {
      Real* dzj = dz + j * zrow + t * w;
      const Real* mt = mats + t * nodes * nodes;
      if constexpr (W == 0) {
        for (std::size_t i = 0; i < nodes; ++i) {
          const Real mij = mt[i * nodes + j];
          const Real* dyi = dy + i * w;
          for (std::size_t c = 0; c < w; ++c) dzj[c] += mij * dyi[c];
        }
      } else {
        Lane<W> acc = LaneMap<W>(dzj);
        for (std::size_t i = 0; i < nodes; ++i) acc += mt[i * nodes + j] * ConstLaneMap<W>(dy + i * W);
        LaneMap<W> out(dzj);
        out = acc;
      }
    }
  }
}

// dm[i, :] += sum_g sum_c dy[g, i, c] z[g, :, t*width + c]
template <std::size_t W>
void mix_outer_row(std::size_t groups, std::size_t nodes, std::size_t width, std::size_t count,
                   std::size_t t, std::size_t i, const Real* dy, const Real* z, Real* dm) {
  const std::size_t w = W ? W : width;
  const std::size_t zrow = w * count;
  Real* dmi = dm + i * nodes;
  for (std::size_t g = 0; g < groups; ++g) {
    const Real* dyi = dy + (g * nodes + i) * w;
    const Real* zg = z + g * nodes * zrow + t * w;
    for (std::size_t j = 0; j < nodes; ++j) {
      const Real* zj = zg + j * zrow;
      Real acc = 0;
      for (std::size_t c = 0; c < w; ++c) acc += dyi[c] * zj[c];
      dmi[j] += acc;
    }
  }
}

// Attention slices with the head width D fixed at compile time. Same algebra as
// attention_slice_forward/backward, with the D x D state kept in registers.
template <int D>
void attention_slice_forward_fixed(const AttentionDims& d, std::size_t b, std::size_t n, std::size_t h, In q,
                                   In k, In v, Out out) {
  using Vec = Eigen::Matrix<Real, D, 1>;
  using Mat = Eigen::Matrix<Real, D, D, Eigen::RowMajor>;
  using CVec = Eigen::Map<const Vec>;
  const std::size_t off = h * D;
  Mat kv = Mat::Zero();
  Vec z = Vec::Zero();
  for (std::size_t t = 0; t < d.steps; ++t) {
    const std::size_t base = att_index(d, b, t, n) + off;
    CVec kt(k.data() + base), vt(v.data() + base);
    z += kt;
    kv.noalias() += kt * vt.transpose();
  }
  for (std::size_t t = 0; t < d.steps; ++t) {
    const std::size_t base = att_index(d, b, t, n) + off;
    CVec qt(q.data() + base);
    Eigen::Map<Vec> ot(out.data() + base);
    ot.noalias() = kv.transpose() * qt;
    ot /= qt.dot(z);
  }
}

template <int D>
void attention_slice_backward_fixed(const AttentionDims& d, std::size_t b, std::size_t n, std::size_t h, In q,
                                    In k, In v, In dout, Out dq, Out dk, Out dv) {
  using Vec = Eigen::Matrix<Real, D, 1>;
  using Mat = Eigen::Matrix<Real, D, D, Eigen::RowMajor>;
  using CVec = Eigen::Map<const Vec>;
  using MVec = Eigen::Map<Vec>;
  const std::size_t off = h * D;
  Mat kv = Mat::Zero(), dkv = Mat::Zero();
  Vec z = Vec::Zero(), dz = Vec::Zero();
  for (std::size_t t = 0; t < d.steps; ++t) {
    const std::size_t base = att_index(d, b, t, n) + off;
    CVec kt(k.data() + base), vt(v.data() + base);
    z += kt;
    kv.noalias() += kt * vt.transpose();
  }
  for (std::size_t t = 0; t < d.steps; ++t) {
    const std::size_t base = att_index(d, b, t, n) + off;
    CVec qt(q.data() + base), gt(dout.data() + base);
    const Real inv_den = Real(1) / qt.dot(z);
    const Vec gs = gt * inv_den;
    const Vec o = (kv.transpose() * qt) * inv_den;
    const Real dden = -gt.dot(o) * inv_den;
    MVec dqt(dq.data() + base);
    dqt.noalias() += z * dden + kv * gs;
    dz += qt * dden;
    dkv.noalias() += qt * gs.transpose();
  }
  for (std::size_t t = 0; t < d.steps; ++t) {
    const std::size_t base = att_index(d, b, t, n) + off;
    CVec kt(k.data() + base), vt(v.data() + base);
    MVec dkt(dk.data() + base), dvt(dv.data() + base);
    dkt.noalias() += dz + dkv * vt;
    dvt.noalias() += dkv.transpose() * kt;
  }
}

// Calls f.template operator()<D>() for head widths with a fixed-size kernel,
// or f.template operator()<0>() otherwise.
template <class F>
void with_head_width(std::size_t dh, F&& f) {
  switch (dh) {
    case 4: f.template operator()<4>(); break;
    case 8: f.template operator()<8>(); break;
    case 16: f.template operator()<16>(); break;
    default: f.template operator()<0>(); break;
  }
}

// Calls f.template operator()<W>() with the compile-time width matching `width`.
template <class F>
void with_width(std::size_t width, F&& f) {
  switch (width) {
    case 8: f.template operator()<8>(); break;
    case 16: f.template operator()<16>(); break;
    case 32: f.template operator()<32>(); break;
    default: f.template operator()<0>(); break;
  }
}

}  // namespace

void set_parallel(bool enabled) noexcept { g_parallel.store(enabled); }
bool parallel_enabled() noexcept { return g_parallel.load(); }
int max_threads() noexcept {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

// ---------------------------------------------------------------------------
// Serial reference.
// ---------------------------------------------------------------------------
namespace serial {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + m * n, Real(0));
  for (std::size_t i = 0; i < m; ++i) {
    Real* ci = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Real aip = a[i * k + p];
      const Real* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* ai = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* bj = b.data() + j * k;
      Real acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate) {
  if (!accumulate) std::fill(c.begin(), c.begin() + m * n, Real(0));
  for (std::size_t p = 0; p < k; ++p) {
    const Real* ap = a.data() + p * m;
    const Real* bp = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real api = ap[i];
      Real* ci = c.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

void graph_propagate(std::size_t groups, std::size_t nodes, std::size_t width, In m, In x, Out y,
                     bool transpose_m) {
  const std::size_t block = nodes * width;
  for (std::size_t g = 0; g < groups; ++g) {
    const Real* xg = x.data() + g * block;
    Real* yg = y.data() + g * block;
    for (std::size_t i = 0; i < nodes; ++i) {
      Real* yi = yg + i * width;
      for (std::size_t j = 0; j < nodes; ++j) {
        const Real mij = transpose_m ? m[j * nodes + i] : m[i * nodes + j];
        const Real* xj = xg + j * width;
        for (std::size_t c = 0; c < width; ++c) yi[c] += mij * xj[c];
      }
    }
  }
}

void graph_outer(std::size_t groups, std::size_t nodes, std::size_t width, In dy, In x, Out dm) {
  const std::size_t block = nodes * width;
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t i = 0; i < nodes; ++i) {
      const Real* dyi = dy.data() + g * block + i * width;
      for (std::size_t j = 0; j < nodes; ++j) {
        const Real* xj = x.data() + g * block + j * width;
        Real acc = 0;
        for (std::size_t c = 0; c < width; ++c) acc += dyi[c] * xj[c];
        dm[i * nodes + j] += acc;
      }
    }
  }
}

void graph_mix(std::size_t groups, std::size_t nodes, std::size_t width, std::size_t count, In mats,
               In z, Out y) {
  const std::size_t zrow = width * count;
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < nodes; ++i)
      for (std::size_t c = 0; c < width; ++c) {
        Real acc = 0;
        for (std::size_t t = 0; t < count; ++t)
          for (std::size_t j = 0; j < nodes; ++j)
            acc += mats[(t * nodes + i) * nodes + j] * z[(g * nodes + j) * zrow + t * width + c];
        y[(g * nodes + i) * width + c] += acc;
      }
}

void graph_mix_transpose(std::size_t groups, std::size_t nodes, std::size_t width,
                         std::size_t count, In mats, In dy, Out dz) {
  const std::size_t zrow = width * count;
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t j = 0; j < nodes; ++j)
      for (std::size_t t = 0; t < count; ++t)
        for (std::size_t c = 0; c < width; ++c) {
          Real acc = 0;
          for (std::size_t i = 0; i < nodes; ++i)
            acc += mats[(t * nodes + i) * nodes + j] * dy[(g * nodes + i) * width + c];
          dz[(g * nodes + j) * zrow + t * width + c] += acc;
        }
}

void graph_mix_outer(std::size_t groups, std::size_t nodes, std::size_t width, std::size_t count,
                     std::size_t block, In dy, In z, Out dm) {
  const std::size_t zrow = width * count;
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j = 0; j < nodes; ++j) {
      Real acc = 0;
      for (std::size_t g = 0; g < groups; ++g)
        for (std::size_t c = 0; c < width; ++c)
          acc += dy[(g * nodes + i) * width + c] * z[(g * nodes + j) * zrow + block * width + c];
      dm[i * nodes + j] += acc;
    }
}

void softmax_rows(std::size_t rows, std::size_t cols, In x, Out y) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(cols, x.data() + r * cols, y.data() + r * cols);
}

void linear_attention_forward(const AttentionDims& d, In q, In k, In v, Out out) {
  std::vector<Real> state;
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t n = 0; n < d.nodes; ++n)
      for (std::size_t h = 0; h < d.heads; ++h) attention_slice_forward(d, b, n, h, q, k, v, out, state);
}

void linear_attention_backward(const AttentionDims& d, In q, In k, In v, In dout, Out dq, Out dk,
                               Out dv) {
  std::vector<Real> state;
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t n = 0; n < d.nodes; ++n)
      for (std::size_t h = 0; h < d.heads; ++h)
        attention_slice_backward(d, b, n, h, q, k, v, dout, dq, dk, dv, state);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP variants. Dense products go through Eigen on fixed blocks of output
// rows; work is split over those blocks (or independent slices) only, so the
// result is identical for every thread count.
// ---------------------------------------------------------------------------
namespace {

using RowMajor = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor, 0, Eigen::OuterStride<>>;
using MutMap = Eigen::Map<RowMajor, 0, Eigen::OuterStride<>>;

constexpr std::size_t kRowBlock = 256;

std::ptrdiff_t row_blocks(std::size_t m) {
  return static_cast<std::ptrdiff_t>((m + kRowBlock - 1) / kRowBlock);
}

template <class Product>
void store(MutMap& c, const Product& product, bool accumulate) {
  if (accumulate)
    c.noalias() += product;
  else
    c.noalias() = product;
}

Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

std::vector<Real> transposed(std::size_t rows, std::size_t cols, const Real* x) {
  std::vector<Real> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
  return out;
}

}  // namespace

namespace omp {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate) {
  const ConstMap bm(b.data(), ix(k), ix(n), Eigen::OuterStride<>(ix(n)));
  const auto blocks = row_blocks(m);
#pragma omp parallel for schedule(static) if (use_parallel(m * n * k))
  for (std::ptrdiff_t bi = 0; bi < blocks; ++bi) {
    const std::size_t i0 = static_cast<std::size_t>(bi) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    const ConstMap am(a.data() + i0 * k, ix(rows), ix(k), Eigen::OuterStride<>(ix(k)));
    MutMap cm(c.data() + i0 * n, ix(rows), ix(n), Eigen::OuterStride<>(ix(n)));
    store(cm, am * bm, accumulate);
  }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate) {
  const ConstMap bm(b.data(), ix(n), ix(k), Eigen::OuterStride<>(ix(k)));
  const auto blocks = row_blocks(m);
#pragma omp parallel for schedule(static) if (use_parallel(m * n * k))
  for (std::ptrdiff_t bi = 0; bi < blocks; ++bi) {
    const std::size_t i0 = static_cast<std::size_t>(bi) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    const ConstMap am(a.data() + i0 * k, ix(rows), ix(k), Eigen::OuterStride<>(ix(k)));
    MutMap cm(c.data() + i0 * n, ix(rows), ix(n), Eigen::OuterStride<>(ix(n)));
    store(cm, am * bm.transpose(), accumulate);
  }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate) {
  const ConstMap bm(b.data(), ix(k), ix(n), Eigen::OuterStride<>(ix(n)));
  const auto blocks = row_blocks(m);
#pragma omp parallel for schedule(static) if (use_parallel(m * n * k))
  for (std::ptrdiff_t bi = 0; bi < blocks; ++bi) {
    const std::size_t i0 = static_cast<std::size_t>(bi) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - i0);
    const ConstMap am(a.data() + i0, ix(k), ix(rows), Eigen::OuterStride<>(ix(m)));
    MutMap cm(c.data() + i0 * n, ix(rows), ix(n), Eigen::OuterStride<>(ix(n)));
    store(cm, am.transpose() * bm, accumulate);
  }
}

void graph_propagate(std::size_t groups, std::size_t nodes, std::size_t width, In m, In x, Out y,
                     bool transpose_m) {
  const std::vector<Real> mt = transpose_m ? transposed(nodes, nodes, m.data()) : std::vector<Real>{};
  graph_mix(groups, nodes, width, 1, transpose_m ? In(mt) : m, x, y);
}

void graph_mix(std::size_t groups, std::size_t nodes, std::size_t width, std::size_t count, In mats,
               In z, Out y) {
  const auto total = static_cast<std::ptrdiff_t>(groups);
  with_width(width, [&]<std::size_t W>() {
#pragma omp parallel for schedule(static) if (use_parallel(groups * nodes * nodes * width * count))
    for (std::ptrdiff_t gg = 0; gg < total; ++gg) {
      const auto g = static_cast<std::size_t>(gg);
      mix_group<W>(nodes, width, count, mats.data(), z.data() + g * nodes * width * count,
                   y.data() + g * nodes * width);
    }
  });
}

void graph_mix_transpose(std::size_t groups, std::size_t nodes, std::size_t width,
                         std::size_t count, In mats, In dy, Out dz) {
  const auto total = static_cast<std::ptrdiff_t>(groups);
  with_width(width, [&]<std::size_t W>() {
#pragma omp parallel for schedule(static) if (use_parallel(groups * nodes * nodes * width * count))
    for (std::ptrdiff_t gg = 0; gg < total; ++gg) {
      const auto g = static_cast<std::size_t>(gg);
      mix_group_transpose<W>(nodes, width, count, mats.data(), dy.data() + g * nodes * width,
                             dz.data() + g * nodes * width * count);
    }
  });
}

void graph_mix_outer(std::size_t groups, std::size_t nodes, std::size_t width, std::size_t count,
                     std::size_t block, In dy, In z, Out dm) {
  const auto rows = static_cast<std::ptrdiff_t>(nodes);
  with_width(width, [&]<std::size_t W>() {
#pragma omp parallel for schedule(static) if (use_parallel(groups * nodes * nodes * width))
    for (std::ptrdiff_t ii = 0; ii < rows; ++ii) {
      mix_outer_row<W>(groups, nodes, width, count, block, static_cast<std::size_t>(ii), dy.data(),
                       z.data(), dm.data());
    }
  });
}

void graph_outer(std::size_t groups, std::size_t nodes, std::size_t width, In dy, In x, Out dm) {
  const std::size_t block = nodes * width;
  const auto count = static_cast<std::ptrdiff_t>(nodes);
#pragma omp parallel for schedule(static) if (use_parallel(groups * block * nodes))
  for (std::ptrdiff_t ii = 0; ii < count; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t g = 0; g < groups; ++g) {
      const Real* dyi = dy.data() + g * block + i * width;
      for (std::size_t j = 0; j < nodes; ++j) {
        const Real* xj = x.data() + g * block + j * width;
        Real acc = 0;
        for (std::size_t c = 0; c < width; ++c) acc += dyi[c] * xj[c];
        dm[i * nodes + j] += acc;
      }
    }
  }
}

void softmax_rows(std::size_t rows, std::size_t cols, In x, Out y) {
  const auto count = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static) if (use_parallel(rows * cols * 8))
  for (std::ptrdiff_t r = 0; r < count; ++r) {
    const auto row = static_cast<std::size_t>(r);
    softmax_row(cols, x.data() + row * cols, y.data() + row * cols);
  }
}

void linear_attention_forward(const AttentionDims& d, In q, In k, In v, Out out) {
  const auto slices = static_cast<std::ptrdiff_t>(d.batch * d.nodes * d.heads);
  const std::size_t dh = d.dim / d.heads;
  with_head_width(dh, [&]<int D>() {
#pragma omp parallel if (use_parallel(d.batch * d.nodes * d.steps * d.dim * dh))
    {
      std::vector<Real> state;
#pragma omp for schedule(static)
      for (std::ptrdiff_t s = 0; s < slices; ++s) {
        const auto idx = static_cast<std::size_t>(s);
        const std::size_t h = idx % d.heads;
        const std::size_t n = (idx / d.heads) % d.nodes;
        const std::size_t b = idx / (d.heads * d.nodes);
        if constexpr (D > 0)
          attention_slice_forward_fixed<D>(d, b, n, h, q, k, v, out);
        else
          attention_slice_forward(d, b, n, h, q, k, v, out, state);
      }
    }
  });
}

void linear_attention_backward(const AttentionDims& d, In q, In k, In v, In dout, Out dq, Out dk,
                               Out dv) {
  const auto slices = static_cast<std::ptrdiff_t>(d.batch * d.nodes * d.heads);
  const std::size_t dh = d.dim / d.heads;
  with_head_width(dh, [&]<int D>() {
#pragma omp parallel if (use_parallel(d.batch * d.nodes * d.steps * d.dim * dh))
    {
      std::vector<Real> state;
#pragma omp for schedule(static)
      for (std::ptrdiff_t s = 0; s < slices; ++s) {
        const auto idx = static_cast<std::size_t>(s);
        const std::size_t h = idx % d.heads;
        const std::size_t n = (idx / d.heads) % d.nodes;
        const std::size_t b = idx / (d.heads * d.nodes);
        if constexpr (D > 0)
          attention_slice_backward_fixed<D>(d, b, n, h, q, k, v, dout, dq, dk, dv);
        else
          attention_slice_backward(d, b, n, h, q, k, v, dout, dq, dk, dv, state);
      }
    }
  });
}

}  // namespace omp

// ---------------------------------------------------------------------------
// Dispatch. The omp kernels are used even single-threaded; the serial
// namespace is the reference they are tested against.
// ---------------------------------------------------------------------------

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate) {
  omp::gemm_nn(m, n, k, a, b, c, accumulate);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate) {
  omp::gemm_nt(m, n, k, a, b, c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, In a, In b, Out c, bool accumulate) {
  omp::gemm_tn(m, n, k, a, b, c, accumulate);
}

void graph_propagate(std::size_t groups, std::size_t nodes, std::size_t width, In m, In x, Out y,
                     bool transpose_m) {
  omp::graph_propagate(groups, nodes, width, m, x, y, transpose_m);
}

void graph_outer(std::size_t groups, std::size_t nodes, std::size_t width, In dy, In x, Out dm) {
  omp::graph_outer(groups, nodes, width, dy, x, dm);
}

void graph_mix(std::size_t groups, std::size_t nodes, std::size_t width, std::size_t count, In mats,
               In z, Out y) {
  omp::graph_mix(groups, nodes, width, count, mats, z, y);
}

void graph_mix_transpose(std::size_t groups, std::size_t nodes, std::size_t width,
                         std::size_t count, In mats, In dy, Out dz) {
  omp::graph_mix_transpose(groups, nodes, width, count, mats, dy, dz);
}

void graph_mix_outer(std::size_t groups, std::size_t nodes, std::size_t width, std::size_t count,
                     std::size_t block, In dy, In z, Out dm) {
  omp::graph_mix_outer(groups, nodes, width, count, block, dy, z, dm);
}

void softmax_rows(std::size_t rows, std::size_t cols, In x, Out y) { omp::softmax_rows(rows, cols, x, y); }

void linear_attention_forward(const AttentionDims& d, In q, In k, In v, Out out) {
  omp::linear_attention_forward(d, q, k, v, out);
}

void linear_attention_backward(const AttentionDims& d, In q, In k, In v, In dout, Out dq, Out dk,
                               Out dv) {
  omp::linear_attention_backward(d, q, k, v, dout, dq, dk, dv);
}

}  // namespace stnas::kernels
