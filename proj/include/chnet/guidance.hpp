#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "chnet/ops.hpp"

CHNET_NS_BEGIN

enum class Aggregation { mean, max, none };

Aggregation parse_aggregation(const std::string& s);
std::string to_string(Aggregation a);

struct GuidanceConfig {
  int channels = 0;
  int expansion_ratio = 3;
  Aggregation aggregation = Aggregation::mean;

  ConvSpec guide_spec() const { return {channels, channels, 3, 3, 1, 1, true}; }
  ConvSpec expand_spec() const {
    return {channels, channels * expansion_ratio, 1, 1, 1, 0, true};
  }
  ConvSpec out_spec() const { return {channels, channels, 3, 3, 1, 1, true}; }
};

/// Learnable tensors of one fast guidance instance.
struct GuidanceParams {
  Variable w_guide, b_guide;
  Variable w_expand, b_expand;
  Variable w_out, b_out;

  static GuidanceParams init(const GuidanceConfig& cfg, std::mt19937_64& rng);
  static GuidanceParams zeros(const GuidanceConfig& cfg);
  std::vector<Variable> all() const;
};

/// Fast guidance fusion of image features into depth features.
///
///   weight   = w_guide(f_I)                3x3, C -> C
///   expanded = w_expand(weight)            1x1, C -> N*C
///   out      = sum_j f_D * chunk_j(expanded)
///   result   = w_out(out * psi(expanded))  3x3, C -> C
///
/// psi reduces the expanded tensor across all N*C channels (mean or max).
/// With Aggregation::none the second multiplicative stage is skipped.
Variable fast_guidance(const Variable& f_image, const Variable& f_depth,
                       const GuidanceParams& params, const GuidanceConfig& cfg);

/// Classic guided filter over every (n, c) plane of `input` with guidance
/// `guide`, evaluated through box statistics. Only windows fully inside the
/// plane are used; a pixel collects contributions from every such window
/// that contains it. Differentiable in both arguments.
Variable guided_filter(const Variable& input, const Variable& guide, int window,
                       Real eps);

/// Non-differentiable convenience wrapper of guided_filter.
Tensor4 classic_guided_filter(const Tensor4& input, const Tensor4& guide,
                              int window, Real eps);

/// Elementwise summation fusion.
Variable fuse_sum(const Variable& f_image, const Variable& f_depth);

/// Channel concatenation [f_I | f_D] projected 2C -> C by a 1x1 convolution.
Variable fuse_concat(const Variable& f_image, const Variable& f_depth,
                     const Variable& w_proj, const Variable& b_proj);

/// Guided-filter fusion: the depth features are filtered with a guidance map
/// derived from the image features by a 3x3 convolution, then projected by a
/// 3x3 convolution. The filter window shrinks to fit small feature maps.
struct GuidedFilterFusionParams {
  Variable w_guide, b_guide;
  Variable w_out, b_out;
  int window = 3;
  Real eps = Real(1e-2);

  static GuidedFilterFusionParams init(int channels, std::mt19937_64& rng);
  std::vector<Variable> all() const;
};

Variable fuse_guided_filter(const Variable& f_image, const Variable& f_depth,
                            const GuidedFilterFusionParams& params);

/// Analytic parameter and multiply-accumulate counts of one fast guidance
/// instance on input (n, C, h, w). Elementwise operations count one op per
/// element.
struct GuidanceComplexity {
  std::int64_t params = 0;
  std::int64_t conv_macs = 0;
  std::int64_t elementwise_ops = 0;
  std::int64_t total_macs() const { return conv_macs + elementwise_ops; }
};

GuidanceComplexity fast_guidance_complexity(const GuidanceConfig& cfg,
                                            const Shape& input);

/// Counts for fuse_guided_filter on input (n, C, h, w) with the window it
/// would use. The filter itself is counted per element: four separable box
/// means, two box-mean adjoints and the pointwise algebra around them.
GuidanceComplexity guided_filter_fusion_complexity(int channels, const Shape& input,
                                                   int window = 3);

/// Fan-in scaled uniform initialization for a convolution weight.
Variable init_conv_weight(const Shape& shape, int fan_in, std::mt19937_64& rng);

CHNET_NS_END
