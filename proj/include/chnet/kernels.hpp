#pragma once

#include <cstdint>

#include "chnet/real.hpp"
#include "chnet/tensor.hpp"

CHNET_NS_BEGIN

struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kh = 1;
  int kw = 1;
  int stride = 1;
  int padding = 0;
  bool has_bias = true;

  int out_h(int h) const { return (h + 2 * padding - kh) / stride + 1; }
  int out_w(int w) const { return (w + 2 * padding - kw) / stride + 1; }
  /// Spatial size produced by the transposed convolution.
  int tout_h(int h) const { return (h - 1) * stride - 2 * padding + kh; }
  int tout_w(int w) const { return (w - 1) * stride - 2 * padding + kw; }
  std::int64_t weight_count() const {
    return static_cast<std::int64_t>(in_channels) * out_channels * kh * kw;
  }
  std::int64_t param_count() const {
    return weight_count() + (has_bias ? out_channels : 0);
  }
};

/// Low-level kernels. All matrices are row-major and contiguous.
namespace kernels {

/// C[MxN] (+)= A[MxK] * B[KxN]
void gemm_nn(int m, int n, int k, const Real* a, const Real* b, Real* c,
             bool accumulate);
/// C[MxN] (+)= A[MxK] * B[NxK]^T
void gemm_nt(int m, int n, int k, const Real* a, const Real* b, Real* c,
             bool accumulate);
/// C[MxN] (+)= A[KxM]^T * B[KxN]
void gemm_tn(int m, int n, int k, const Real* a, const Real* b, Real* c,
             bool accumulate);

/// Unfolds one (C, H, W) image into a (C*kh*kw, oh*ow) patch matrix.
void im2col(const Real* image, int channels, int h, int w, int kh, int kw,
            int stride, int pad, Real* col);
/// Adjoint of im2col: scatter-adds a patch matrix back into the image.
void col2im(const Real* col, int channels, int h, int w, int kh, int kw,
            int stride, int pad, Real* image);

/// Reference nested-loop convolution forward.
Tensor4 conv2d_direct(const Tensor4& x, const Tensor4& weight,
                      const Tensor4* bias, const ConvSpec& spec);
/// Patch-matrix convolution forward.
Tensor4 conv2d_im2col(const Tensor4& x, const Tensor4& weight,
                      const Tensor4* bias, const ConvSpec& spec);

/// Multiply-accumulates executed by convolution kernels in this thread since
/// the last reset.
std::uint64_t conv_mac_counter();
void reset_conv_mac_counter();
void add_conv_macs(std::uint64_t macs);

}  // namespace kernels

CHNET_NS_END
