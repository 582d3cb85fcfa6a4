#pragma once

// Independent reference evaluations used as test oracles. None of these call
// into the library kernels they check.

#include <cmath>
#include <vector>

#include "chnet/tensor.hpp"

namespace oracle {

using chnet::Real;
using chnet::Shape;
using chnet::Tensor4;

/// Direct nested-loop convolution (cross-correlation) with zero padding.
inline Tensor4 conv2d(const Tensor4& x, const Tensor4& w, const Tensor4* bias,
                      int stride, int pad) {
  const Shape xs = x.shape(), ws = w.shape();
  const int oh = (xs.h + 2 * pad - ws.h) / stride + 1;
  const int ow = (xs.w + 2 * pad - ws.w) / stride + 1;
  Tensor4 out({xs.n, ws.n, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int o = 0; o < ws.n; ++o)
      for (int y = 0; y < oh; ++y)
        for (int x0 = 0; x0 < ow; ++x0) {
          long double acc = bias ? (*bias)[o] : 0;
          for (int c = 0; c < xs.c; ++c)
            for (int i = 0; i < ws.h; ++i)
              for (int j = 0; j < ws.w; ++j) {
                const int yy = y * stride - pad + i, xx = x0 * stride - pad + j;
                if (yy < 0 || xx < 0 || yy >= xs.h || xx >= xs.w) continue;
                acc += static_cast<long double>(w.at(o, c, i, j)) * x.at(n, c, yy, xx);
              }
          out.at(n, o, y, x0) = static_cast<Real>(acc);
        }
  return out;
}

/// Scatter-add transposed convolution: every input value stamps the kernel
/// into the output at stride offsets. Weight layout (in_c, out_c, kh, kw).
inline Tensor4 transposed_conv2d(const Tensor4& x, const Tensor4& w, int stride,
                                 int pad) {
  const Shape xs = x.shape(), ws = w.shape();
  const int oh = (xs.h - 1) * stride - 2 * pad + ws.h;
  const int ow = (xs.w - 1) * stride - 2 * pad + ws.w;
  Tensor4 out({xs.n, ws.c, oh, ow});
  for (int n = 0; n < xs.n; ++n)
    for (int c = 0; c < xs.c; ++c)
      for (int y = 0; y < xs.h; ++y)
        for (int x0 = 0; x0 < xs.w; ++x0)
          for (int o = 0; o < ws.c; ++o)
            for (int i = 0; i < ws.h; ++i)
              for (int j = 0; j < ws.w; ++j) {
                const int yy = y * stride - pad + i, xx = x0 * stride - pad + j;
                if (yy < 0 || xx < 0 || yy >= oh || xx >= ow) continue;
                out.at(n, o, yy, xx) += x.at(n, c, y, x0) * w.at(c, o, i, j);
              }
  return out;
}

/// Literal double sum E_p = sum_q W_pq(G) I_q over a single h x w plane, with
/// W_pq = 1/|w|^2 * sum over fully contained windows k holding both p and q
/// of (1 + (G_p - mu_k)(G_q - mu_k) / (var_k + eps)). O(h^2 w^2 n^2).
inline std::vector<double> guided_filter_double_sum(const std::vector<double>& img,
                                                    const std::vector<double>& g,
                                                    int h, int w, int n,
                                                    double eps) {
  const int kh = h - n + 1, kw = w - n + 1;
  std::vector<double> mu(static_cast<std::size_t>(kh) * kw), var(mu.size());
  for (int ky = 0; ky < kh; ++ky)
    for (int kx = 0; kx < kw; ++kx) {
      double s = 0, s2 = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          const double v = g[(ky + i) * w + kx + j];
          s += v;
          s2 += v * v;
        }
      const double m = s / (n * n);
      mu[ky * kw + kx] = m;
      var[ky * kw + kx] = s2 / (n * n) - m * m;
    }
  const double norm = 1.0 / (static_cast<double>(n) * n * n * n);
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  for (int py = 0; py < h; ++py)
    for (int px = 0; px < w; ++px) {
      double e = 0;
      for (int qy = 0; qy < h; ++qy)
        for (int qx = 0; qx < w; ++qx) {
          double weight = 0;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const bool has_p = py >= ky && py < ky + n && px >= kx && px < kx + n;
              const bool has_q = qy >= ky && qy < ky + n && qx >= kx && qx < kx + n;
              if (!has_p || !has_q) continue;
              const double m = mu[ky * kw + kx];
              weight += 1 + (g[py * w + px] - m) * (g[qy * w + qx] - m) /
                                (var[ky * kw + kx] + eps);
            }
          e += norm * weight * img[qy * w + qx];
        }
      out[py * w + px] = e;
    }
  return out;
}

}  // namespace oracle
