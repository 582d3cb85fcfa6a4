#include "chnet/guidance.hpp"

#include <algorithm>
#include <cmath>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

Aggregation parse_aggregation(const std::string& s) {
  if (s == "mean") return Aggregation::mean;
  if (s == "max") return Aggregation::max;
  if (s == "none") return Aggregation::none;
  throw ConfigError("unknown aggregation '" + s + "' (expected mean|max|none)");
}

std::string to_string(Aggregation a) {
  switch (a) {
    case Aggregation::mean: return "mean";
    case Aggregation::max: return "max";
    case Aggregation::none: return "none";
  }
  return "mean";
}

Variable init_conv_weight(const Shape& shape, int fan_in, std::mt19937_64& rng) {
  const Real bound = static_cast<Real>(std::sqrt(6.0 / std::max(1, fan_in)));
  return Variable(Tensor4::uniform(shape, rng, -bound, bound), true);
}

namespace {

Variable zero_param(const Shape& s) { return Variable(Tensor4(s), true); }

Shape weight_shape(const ConvSpec& s) {
  return {s.out_channels, s.in_channels, s.kh, s.kw};
}
Shape bias_shape(const ConvSpec& s) { return {1, s.out_channels, 1, 1}; }
int fan_in(const ConvSpec& s) { return s.in_channels * s.kh * s.kw; }

void check_params(const GuidanceParams& p, const GuidanceConfig& cfg) {
  if (cfg.channels < 1 || cfg.expansion_ratio < 1) {
    throw ShapeError("fast_guidance: invalid config");
  }
  if (!(p.w_guide.shape() == weight_shape(cfg.guide_spec())) ||
      !(p.w_expand.shape() == weight_shape(cfg.expand_spec())) ||
      !(p.w_out.shape() == weight_shape(cfg.out_spec()))) {
    throw ShapeError("fast_guidance: parameter shapes do not match C=" +
                     std::to_string(cfg.channels) +
                     ", N=" + std::to_string(cfg.expansion_ratio));
  }
}

}  // namespace

GuidanceParams GuidanceParams::init(const GuidanceConfig& cfg,
                                    std::mt19937_64& rng) {
  const ConvSpec g = cfg.guide_spec(), e = cfg.expand_spec(), o = cfg.out_spec();
  GuidanceParams p;
  p.w_guide = init_conv_weight(weight_shape(g), fan_in(g), rng);
  p.b_guide = zero_param(bias_shape(g));
  p.w_expand = init_conv_weight(weight_shape(e), fan_in(e), rng);
  p.b_expand = zero_param(bias_shape(e));
  p.w_out = init_conv_weight(weight_shape(o), fan_in(o), rng);
  p.b_out = zero_param(bias_shape(o));
  return p;
}

GuidanceParams GuidanceParams::zeros(const GuidanceConfig& cfg) {
  const ConvSpec g = cfg.guide_spec(), e = cfg.expand_spec(), o = cfg.out_spec();
  return {zero_param(weight_shape(g)), zero_param(bias_shape(g)),
          zero_param(weight_shape(e)), zero_param(bias_shape(e)),
          zero_param(weight_shape(o)), zero_param(bias_shape(o))};
}

std::vector<Variable> GuidanceParams::all() const {
  return {w_guide, b_guide, w_expand, b_expand, w_out, b_out};
}

Variable fast_guidance(const Variable& f_image, const Variable& f_depth,
                       const GuidanceParams& params, const GuidanceConfig& cfg) {
  if (!(f_image.shape() == f_depth.shape())) {
    throw ShapeError("fast_guidance: image features " + f_image.shape().str() +
                     " and depth features " + f_depth.shape().str() +
                     " differ");
  }
  if (f_depth.shape().c != cfg.channels) {
    throw ShapeError("fast_guidance: features have " +
                     std::to_string(f_depth.shape().c) +
                     " channels, config expects " +
                     std::to_string(cfg.channels));
  }
  check_params(params, cfg);

  Variable weight = conv2d(f_image, params.w_guide, params.b_guide, cfg.guide_spec());
  Variable expanded =
      conv2d(weight, params.w_expand, params.b_expand, cfg.expand_spec());
  auto subspaces = chunk_channels(expanded, cfg.expansion_ratio);
  Variable out = mul(f_depth, subspaces[0]);
  for (std::size_t j = 1; j < subspaces.size(); ++j) {
    out = add(out, mul(f_depth, subspaces[j]));
  }
  switch (cfg.aggregation) {
    case Aggregation::mean:
      out = broadcast_mul_channelwise(out, mean_over_channels(expanded));
      break;
    case Aggregation::max:
      out = broadcast_mul_channelwise(out, max_over_channels(expanded));
      break;
    case Aggregation::none:
      break;
  }
  return conv2d(out, params.w_out, params.b_out, cfg.out_spec());
}

Variable guided_filter(const Variable& input, const Variable& guide, int window,
                       Real eps) {
  if (!(input.shape() == guide.shape())) {
    throw ShapeError("guided_filter: input " + input.shape().str() +
                     " and guide " + guide.shape().str() + " differ");
  }
  if (!(eps > 0)) throw ShapeError("guided_filter: eps must be positive");
  const Shape s = input.shape();
  if (window < 1 || window > s.h || window > s.w) {
    throw ShapeError("guided_filter: window " + std::to_string(window) +
                     " larger than image " + std::to_string(s.h) + "x" +
                     std::to_string(s.w));
  }
  Variable mean_i = box_mean(input, window);
  Variable mean_g = box_mean(guide, window);
  Variable corr_gi = box_mean(mul(guide, input), window);
  Variable corr_gg = box_mean(mul(guide, guide), window);
  Variable var_g = sub(corr_gg, mul(mean_g, mean_g));
  Variable cov_gi = sub(corr_gi, mul(mean_g, mean_i));
  Variable a = div(cov_gi, add_scalar(var_g, eps));
  Variable b = sub(mean_i, mul(a, mean_g));
  Variable a_sum = box_mean_adjoint(a, window, s.h, s.w);
  Variable b_sum = box_mean_adjoint(b, window, s.h, s.w);
  return add(mul(a_sum, guide), b_sum);
}

Tensor4 classic_guided_filter(const Tensor4& input, const Tensor4& guide,
                              int window, Real eps) {
  NoGradGuard guard;
  return guided_filter(Variable(input), Variable(guide), window, eps).value();
}

Variable fuse_sum(const Variable& f_image, const Variable& f_depth) {
  if (!(f_image.shape() == f_depth.shape())) {
    throw ShapeError("fuse_sum: shape mismatch " + f_image.shape().str() +
                     " vs " + f_depth.shape().str());
  }
  return add(f_image, f_depth);
}

Variable fuse_concat(const Variable& f_image, const Variable& f_depth,
                     const Variable& w_proj, const Variable& b_proj) {
  if (!(f_image.shape() == f_depth.shape())) {
    throw ShapeError("fuse_concat: shape mismatch " + f_image.shape().str() +
                     " vs " + f_depth.shape().str());
  }
  const int c = f_image.shape().c;
  const ConvSpec proj{2 * c, c, 1, 1, 1, 0, b_proj.defined()};
  return conv2d(concat_channels({f_image, f_depth}), w_proj, b_proj, proj);
}

GuidedFilterFusionParams GuidedFilterFusionParams::init(int channels,
                                                        std::mt19937_64& rng) {
  const ConvSpec spec{channels, channels, 3, 3, 1, 1, true};
  GuidedFilterFusionParams p;
  p.w_guide = init_conv_weight(weight_shape(spec), fan_in(spec), rng);
  p.b_guide = zero_param(bias_shape(spec));
  p.w_out = init_conv_weight(weight_shape(spec), fan_in(spec), rng);
  p.b_out = zero_param(bias_shape(spec));
  return p;
}

std::vector<Variable> GuidedFilterFusionParams::all() const {
  return {w_guide, b_guide, w_out, b_out};
}

Variable fuse_guided_filter(const Variable& f_image, const Variable& f_depth,
                            const GuidedFilterFusionParams& params) {
  if (!(f_image.shape() == f_depth.shape())) {
    throw ShapeError("fuse_guided_filter: shape mismatch " +
                     f_image.shape().str() + " vs " + f_depth.shape().str());
  }
  const Shape s = f_depth.shape();
  const ConvSpec spec{s.c, s.c, 3, 3, 1, 1, true};
  int window = std::min({params.window, s.h, s.w});
  if (window % 2 == 0) --window;
  Variable guide = conv2d(f_image, params.w_guide, params.b_guide, spec);
  Variable filtered = guided_filter(f_depth, guide, window, params.eps);
  return conv2d(filtered, params.w_out, params.b_out, spec);
}

GuidanceComplexity guided_filter_fusion_complexity(int channels, const Shape& input,
                                                   int window) {
  window = std::min({window, input.h, input.w});
  if (window % 2 == 0) --window;
  const ConvSpec spec{channels, channels, 3, 3, 1, 1, true};
  const std::int64_t positions = static_cast<std::int64_t>(input.n) * input.h * input.w;
  const std::int64_t elements = positions * channels;
  GuidanceComplexity r;
  r.params = 2 * spec.param_count();
  r.conv_macs = 2 * spec.weight_count() * positions;
  // 4 box means at 2n+1 ops, 2 adjoints at n^2, 12 pointwise ops
  r.elementwise_ops = elements * (4 * (2 * window + 1) + 2 * window * window + 12);
  return r;
}

GuidanceComplexity fast_guidance_complexity(const GuidanceConfig& cfg,
                                            const Shape& input) {
  GuidanceComplexity r;
  const ConvSpec specs[] = {cfg.guide_spec(), cfg.expand_spec(), cfg.out_spec()};
  const std::int64_t positions = static_cast<std::int64_t>(input.n) * input.h * input.w;
  for (const auto& s : specs) {
    r.params += s.param_count();
    r.conv_macs += s.weight_count() * positions;
  }
  const std::int64_t c = cfg.channels;
  const std::int64_t nr = cfg.expansion_ratio;
  // N channel-wise products and N-1 additions over C channels.
  r.elementwise_ops = (2 * nr - 1) * c * positions;
  if (cfg.aggregation != Aggregation::none) {
    // reduction over N*C channels plus the broadcast product
    r.elementwise_ops += nr * c * positions + c * positions;
  }
  return r;
}

CHNET_NS_END
