#pragma once

#include <vector>

#include "chnet/autodiff.hpp"
#include "chnet/kernels.hpp"

CHNET_NS_BEGIN

enum class Mode { train, eval };

/// Running statistics of a batch-normalization layer, shape (1, C, 1, 1).
struct BatchNormState {
  Tensor4 running_mean;
  Tensor4 running_var;

  static BatchNormState init(int channels);
};

inline constexpr Real kBatchNormEps = Real(1e-5);
inline constexpr Real kBatchNormMomentum = Real(0.1);

/// Convolution with weight (out_c, in_c, kh, kw) and optional bias (1,out_c,1,1).
/// Pass an undefined Variable for no bias.
Variable conv2d(const Variable& x, const Variable& weight, const Variable& bias,
                const ConvSpec& spec);

/// Transposed convolution, the adjoint of conv2d with the same weight tensor.
/// Weight layout is (in_c, out_c, kh, kw), i.e. spec.in_channels is the
/// channel count of x.
Variable transposed_conv2d(const Variable& x, const Variable& weight,
                           const Variable& bias, const ConvSpec& spec);

/// Per-channel batch normalization. Train mode normalizes with biased batch
/// statistics and updates `state`; eval mode uses the running statistics.
Variable batchnorm2d(const Variable& x, const Variable& gamma,
                     const Variable& beta, BatchNormState& state, Mode mode,
                     Real eps = kBatchNormEps, Real momentum = kBatchNormMomentum);

Variable relu(const Variable& x);
Variable add(const Variable& x, const Variable& y);
Variable sub(const Variable& x, const Variable& y);
Variable mul(const Variable& x, const Variable& y);
/// Elementwise x / y.
Variable div(const Variable& x, const Variable& y);
Variable scale(const Variable& x, Real factor);
Variable add_scalar(const Variable& x, Real value);

Variable concat_channels(const std::vector<Variable>& xs);
std::vector<Variable> chunk_channels(const Variable& x, int parts);
/// Mean over the channel axis, n x c x h x w -> n x 1 x h x w.
Variable mean_over_channels(const Variable& x);
/// Max over the channel axis; the gradient flows to the first maximal channel.
Variable max_over_channels(const Variable& x);
/// x (n,c,h,w) times s (n,1,h,w) broadcast over channels.
Variable broadcast_mul_channelwise(const Variable& x, const Variable& s);

/// Sum of all elements, returned as a 1x1x1x1 scalar.
Variable sum(const Variable& x);
Variable mean(const Variable& x);

/// Mean over every fully contained window x window block of each plane:
/// (n,c,h,w) -> (n,c,h-window+1,w-window+1).
Variable box_mean(const Variable& x, int window);
/// Adjoint of box_mean: spreads each window value / window^2 over its
/// pixels, (n,c,h-window+1,w-window+1) -> (n,c,h,w).
Variable box_mean_adjoint(const Variable& x, int window, int h, int w);

CHNET_NS_END
