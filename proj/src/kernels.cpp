#include "chnet/kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "chnet/errors.hpp"
#include "chnet/parallel.hpp"

CHNET_NS_BEGIN
namespace kernels {

namespace {

thread_local std::uint64_t g_conv_macs = 0;

constexpr int kBlockN = 256;
constexpr int kBlockK = 128;
constexpr int kRowsPerTask = 16;
constexpr std::size_t kParallelThreshold = 1u << 18;

// Computes rows [i0, i1) and columns [j0, j1) of C += A * B.
void gemm_nn_tile(int i0, int i1, int j0, int j1, int n, int k,
                  const Real* __restrict a, const Real* __restrict b,
                  Real* __restrict c) {
  for (int k0 = 0; k0 < k; k0 += kBlockK) {
    const int k1 = std::min(k, k0 + kBlockK);
    for (int i = i0; i < i1; ++i) {
      Real* crow = c + static_cast<std::size_t>(i) * n;
      const Real* arow = a + static_cast<std::size_t>(i) * k;
      int p = k0;
      for (; p + 3 < k1; p += 4) {
        const Real a0 = arow[p], a1 = arow[p + 1], a2 = arow[p + 2],
                   a3 = arow[p + 3];
        const Real* b0 = b + static_cast<std::size_t>(p) * n;
        const Real* b1 = b0 + n;
        const Real* b2 = b1 + n;
        const Real* b3 = b2 + n;
        for (int j = j0; j < j1; ++j) {
          crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
        }
      }
      for (; p < k1; ++p) {
        const Real av = arow[p];
        const Real* brow = b + static_cast<std::size_t>(p) * n;
        for (int j = j0; j < j1; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace

std::uint64_t conv_mac_counter() { return g_conv_macs; }
void reset_conv_mac_counter() { g_conv_macs = 0; }
void add_conv_macs(std::uint64_t macs) { g_conv_macs += macs; }

void gemm_nn(int m, int n, int k, const Real* a, const Real* b, Real* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + static_cast<std::size_t>(m) * n, Real(0));
  if (m == 0 || n == 0 || k == 0) return;
  const int row_tasks = (m + kRowsPerTask - 1) / kRowsPerTask;
  const int col_tasks = (n + kBlockN - 1) / kBlockN;
  auto run = [&](std::size_t t) {
    const int ri = static_cast<int>(t) / col_tasks;
    const int cj = static_cast<int>(t) % col_tasks;
    const int i0 = ri * kRowsPerTask, i1 = std::min(m, i0 + kRowsPerTask);
    const int j0 = cj * kBlockN, j1 = std::min(n, j0 + kBlockN);
    gemm_nn_tile(i0, i1, j0, j1, n, k, a, b, c);
  };
  const std::size_t tasks = static_cast<std::size_t>(row_tasks) * col_tasks;
  const std::size_t work = static_cast<std::size_t>(m) * n * k;
  if (work < kParallelThreshold) {
    for (std::size_t t = 0; t < tasks; ++t) run(t);
  } else {
    parallel_for(tasks, run);
  }
}

void gemm_nt(int m, int n, int k, const Real* a, const Real* b, Real* c,
             bool accumulate) {
  // Transpose B (N x K) into K x N and reuse the NN kernel.
  std::vector<Real> bt(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j) {
    const Real* brow = b + static_cast<std::size_t>(j) * k;
    for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = brow[p];
  }
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

void gemm_tn(int m, int n, int k, const Real* a, const Real* b, Real* c,
             bool accumulate) {
  std::vector<Real> at(static_cast<std::size_t>(m) * k);
  for (int p = 0; p < k; ++p) {
    const Real* arow = a + static_cast<std::size_t>(p) * m;
    for (int i = 0; i < m; ++i) at[static_cast<std::size_t>(i) * k + p] = arow[i];
  }
  gemm_nn(m, n, k, at.data(), b, c, accumulate);
}

void im2col(const Real* image, int channels, int h, int w, int kh, int kw,
            int stride, int pad, Real* col) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    const Real* img = image + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        Real* dst = col + ((static_cast<std::size_t>(c) * kh + ki) * kw + kj) * cols;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ki;
          Real* drow = dst + static_cast<std::size_t>(y) * ow;
          if (iy < 0 || iy >= h) {
            std::fill(drow, drow + ow, Real(0));
            continue;
          }
          const Real* srow = img + static_cast<std::size_t>(iy) * w;
          if (stride == 1) {
            const int x_lo = std::max(0, pad - kj);
            const int x_hi = std::min(ow, w + pad - kj);
            for (int x = 0; x < std::min(x_lo, ow); ++x) drow[x] = 0;
            for (int x = x_lo; x < x_hi; ++x) drow[x] = srow[x - pad + kj];
            for (int x = std::max(x_hi, 0); x < ow; ++x) drow[x] = 0;
          } else {
            for (int x = 0; x < ow; ++x) {
              const int ix = x * stride - pad + kj;
              drow[x] = (ix >= 0 && ix < w) ? srow[ix] : Real(0);
            }
          }
        }
      }
    }
  }
}

void col2im(const Real* col, int channels, int h, int w, int kh, int kw,
            int stride, int pad, Real* image) {
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  const std::size_t cols = static_cast<std::size_t>(oh) * ow;
  for (int c = 0; c < channels; ++c) {
    Real* img = image + static_cast<std::size_t>(c) * h * w;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const Real* src =
            col + ((static_cast<std::size_t>(c) * kh + ki) * kw + kj) * cols;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          const Real* srow = src + static_cast<std::size_t>(y) * ow;
          Real* drow = img + static_cast<std::size_t>(iy) * w;
          for (int x = 0; x < ow; ++x) {
            const int ix = x * stride - pad + kj;
            if (ix >= 0 && ix < w) drow[ix] += srow[x];
          }
        }
      }
    }
  }
}

Tensor4 conv2d_direct(const Tensor4& x, const Tensor4& weight,
                      const Tensor4* bias, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const int oh = spec.out_h(xs.h), ow = spec.out_w(xs.w);
  Tensor4 out({xs.n, spec.out_channels, oh, ow});
  for (int n = 0; n < xs.n; ++n) {
    for (int o = 0; o < spec.out_channels; ++o) {
      const Real b = bias ? (*bias)[static_cast<std::size_t>(o)] : Real(0);
      for (int y = 0; y < oh; ++y) {
        for (int xx = 0; xx < ow; ++xx) {
          Real acc = b;
          for (int c = 0; c < spec.in_channels; ++c) {
            for (int ki = 0; ki < spec.kh; ++ki) {
              const int iy = y * spec.stride - spec.padding + ki;
              if (iy < 0 || iy >= xs.h) continue;
              for (int kj = 0; kj < spec.kw; ++kj) {
                const int ix = xx * spec.stride - spec.padding + kj;
                if (ix < 0 || ix >= xs.w) continue;
                acc += weight.at(o, c, ki, kj) * x.at(n, c, iy, ix);
              }
            }
          }
          out.at(n, o, y, xx) = acc;
        }
      }
    }
  }
  add_conv_macs(static_cast<std::uint64_t>(spec.weight_count()) * oh * ow * xs.n);
  return out;
}

Tensor4 conv2d_im2col(const Tensor4& x, const Tensor4& weight,
                      const Tensor4* bias, const ConvSpec& spec) {
  const Shape xs = x.shape();
  const int oh = spec.out_h(xs.h), ow = spec.out_w(xs.w);
  const int kdim = spec.in_channels * spec.kh * spec.kw;
  const int cols = oh * ow;
  Tensor4 out({xs.n, spec.out_channels, oh, ow});
  const bool pointwise = spec.kh == 1 && spec.kw == 1 && spec.stride == 1 &&
                         spec.padding == 0;
  std::vector<Real> col(pointwise ? 0 : static_cast<std::size_t>(kdim) * cols);
  for (int n = 0; n < xs.n; ++n) {
    const Real* patches = x.plane(n, 0);
    if (!pointwise) {
      im2col(x.plane(n, 0), spec.in_channels, xs.h, xs.w, spec.kh, spec.kw,
             spec.stride, spec.padding, col.data());
      patches = col.data();
    }
    Real* dst = out.plane(n, 0);
    if (bias) {
      for (int o = 0; o < spec.out_channels; ++o) {
        std::fill(dst + static_cast<std::size_t>(o) * cols,
                  dst + static_cast<std::size_t>(o + 1) * cols,
                  (*bias)[static_cast<std::size_t>(o)]);
      }
    }
    gemm_nn(spec.out_channels, cols, kdim, weight.data(), patches, dst,
            bias != nullptr);
  }
  add_conv_macs(static_cast<std::uint64_t>(spec.weight_count()) * oh * ow * xs.n);
  return out;
}

}  // namespace kernels
CHNET_NS_END
