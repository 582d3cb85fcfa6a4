#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "chnet/guidance.hpp"

CHNET_NS_BEGIN

enum class HeadMode { coupled, decoupled };
enum class FusionKind { fast_guidance, sum, concat, guided_filter };

HeadMode parse_head_mode(const std::string& s);
std::string to_string(HeadMode m);
FusionKind parse_fusion(const std::string& s);
std::string to_string(FusionKind f);

struct ChNetConfig {
  int base_width = 32;
  int num_stages = 4;
  int expansion_ratio = 3;
  HeadMode head_mode = HeadMode::decoupled;
  Aggregation aggregation = Aggregation::mean;
  FusionKind fusion = FusionKind::fast_guidance;
  int height = 64;
  int width = 64;

  /// Throws ConfigError unless widths are positive and (height, width) are
  /// divisible by 2^(num_stages + 1).
  void validate() const;
  /// Channel count after the stem (index 0) and after each stage.
  std::vector<int> encoder_channels() const;
  std::map<std::string, std::string> to_kv() const;
  static ChNetConfig from_kv(const std::map<std::string, std::string>& kv);
};

/// Dense prediction(s) at input resolution. `observed` (P1) is always set;
/// `unobserved` (P2) only with the decoupled head.
struct Prediction {
  Variable observed;
  Variable unobserved;
  bool decoupled() const { return unobserved.defined(); }
};

/// Depth-branch features around the first fusion stage.
struct FeatureTap {
  Tensor4 before_first_fusion;
  Tensor4 after_first_fusion;
};

struct LayerComplexity {
  std::string name;
  std::string kind;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

/// Parameters and multiply-accumulates (1 MAC = 1 FLOP). Convolutions count
/// out_c*in_c*kh*kw per output position, batch norm 2 ops per element, other
/// elementwise ops 1 per element.
struct ComplexityReport {
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::vector<LayerComplexity> layers;

  void add(LayerComplexity row);
};

/// The two-branch encoder / single decoder network.
class ChNetModel {
 public:
  struct Conv {
    std::string name;
    ConvSpec spec;
    bool transposed = false;
  };
  struct Norm {
    std::string name;
    int channels = 0;
  };
  struct ResidualUnit {
    Conv conv1;
    Norm bn1;
    Conv conv2;
    Norm bn2;
    std::optional<Conv> projection;
  };
  struct Encoder {
    Conv stem;
    Norm stem_bn;
    std::vector<std::vector<ResidualUnit>> stages;
  };
  struct Fusion {
    std::string name;
    int channels = 0;
  };
  struct DecoderBlock {
    Conv deconv;
    Norm bn;
  };
  struct HeadBranch {
    Conv conv1;
    Norm bn;
    Conv conv2;
  };
  struct Topology {
    Encoder rgb;
    Encoder depth;
    std::vector<Fusion> fusions;
    std::vector<DecoderBlock> decoder;
    std::vector<HeadBranch> heads;
  };

  /// Builds the network with parameters drawn deterministically from seed.
  static ChNetModel build(const ChNetConfig& cfg, std::uint64_t seed);

  /// rgb: n x 3 x h x w, sparse: n x 1 x h x w (meters, 0 = no measurement).
  Prediction forward(const Tensor4& rgb, const Tensor4& sparse, Mode mode,
                     FeatureTap* tap = nullptr);

  const ChNetConfig& config() const { return cfg_; }
  const Topology& topology() const { return topo_; }

  std::map<std::string, Variable>& parameters() { return params_; }
  const std::map<std::string, Variable>& parameters() const { return params_; }
  std::map<std::string, BatchNormState>& batchnorm_states() { return bn_; }
  const std::map<std::string, BatchNormState>& batchnorm_states() const {
    return bn_;
  }
  const Variable& param(const std::string& name) const;

  void zero_grad();

 private:
  Variable apply(const Conv& c, const Variable& x) const;
  Variable apply(const Norm& n, const Variable& x, Mode mode);
  Variable residual(const ResidualUnit& u, const Variable& x, Mode mode);
  Variable fuse(const Fusion& f, const Variable& image, const Variable& depth);
  Variable head(const HeadBranch& h, const Variable& x, Mode mode);

  ChNetConfig cfg_;
  Topology topo_;
  std::map<std::string, Variable> params_;
  std::map<std::string, BatchNormState> bn_;
};

/// Total learnable parameters, or only those whose name starts with `prefix`.
std::int64_t count_params(const ChNetModel& model, std::string_view prefix = "");

/// Analytic complexity of a full forward pass for a batch of `batch` frames
/// at the configured resolution.
ComplexityReport count_macs(const ChNetModel& model, int batch);

/// Analytic complexity of one fast guidance instance.
ComplexityReport count_macs(const GuidanceConfig& cfg, const Shape& input);

CHNET_NS_END
