#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "chnet/config.hpp"
#include "chnet/spectrum.hpp"

CHNET_NS_BEGIN

struct Datasets {
  std::vector<DepthFrame> train;
  std::vector<DepthFrame> val;
};

/// Reads the configured splits, or generates synthetic train and validation
/// frames from disjoint seed streams when no dataset root is set.
Datasets load_datasets(const RunConfig& cfg);

double median(std::vector<double> xs);

/// Trains from scratch. Writes <out_dir>/epoch_<k>.chnt, <out_dir>/train_log.csv
/// and <out_dir>/config.txt.
TrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// One MetricsRecord CSV row (with header) for the checkpoint on a split
/// ("train" or "val").
std::string cmd_eval(const std::filesystem::path& checkpoint, const RunConfig& cfg,
                     const std::string& split);

/// Dense prediction for one frame, written as a 16-bit depth PGM. Values are
/// clamped to [1/256, 255.996] m so no output pixel reads as missing.
void cmd_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& rgb,
               const std::filesystem::path& sparse, const std::filesystem::path& out);

struct FusionAblation {
  struct Run {
    FusionKind fusion;
    std::uint64_t seed;
    MetricsRecord val;
  };
  std::vector<Run> runs;
  std::vector<FusionKind> variants;

  double median_rmse(FusionKind f) const;
  /// fusion,seeds,median_rmse_mm,min_rmse_mm,max_rmse_mm,median_mae_mm
  std::string csv() const;
  /// fusion,seed,<metrics>
  std::string runs_csv() const;
};

/// Trains each fusion variant with every ablation seed on the same data.
FusionAblation cmd_ablate_fusion(const RunConfig& cfg,
                                 std::vector<FusionKind> variants = {
                                     FusionKind::sum, FusionKind::concat,
                                     FusionKind::guided_filter, FusionKind::fast_guidance});

struct HeadAblation {
  struct Run {
    HeadMode head;
    std::uint64_t seed;
    EvalResult val;
  };
  std::vector<Run> runs;

  /// region is "observed", "unobserved" or "total".
  double median_rmse(HeadMode head, const std::string& region) const;
  /// head,region,median_rmse_mm,median_mae_mm; six data rows
  std::string csv() const;
};

HeadAblation cmd_ablate_head(const RunConfig& cfg);

struct BenchRow {
  std::string module;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  double median_s = 0;
  double min_s = 0;
  double max_s = 0;
};

/// Times eval-mode forward passes of fast guidance and guided-filter fusion
/// on random input of `shape`: median of `repeats` runs after `warmup`.
std::vector<BenchRow> cmd_bench_guidance(const Shape& shape, int repeats, int warmup,
                                         std::uint64_t seed);
std::string bench_csv(const std::vector<BenchRow>& rows);

struct SpectrumDiagnostic {
  bool trained = false;
  std::string frame_id;
  std::vector<ChannelSpectrum> channels;

  int enhanced_count() const;
  /// channel,low_band_before,low_band_after,enhanced,trained
  std::string csv() const;
  /// channel,stage,bin,lo,hi,weight
  std::string histogram_csv() const;
};

/// Depth-branch features before and after the first fusion of the model in
/// `checkpoint`, for one validation frame.
SpectrumDiagnostic cmd_fft_diag(const std::filesystem::path& checkpoint, const RunConfig& cfg);

struct DensitySweep {
  struct Row {
    double ratio;
    double valid_fraction;
    MetricsRecord metrics;
  };
  std::vector<Row> rows;

  /// RMSE non-increasing as the ratio grows, allowing a single rise of at
  /// most 2%.
  bool degrades_with_sparsity() const;
  /// ratio,valid_fraction,<metrics>
  std::string csv() const;
};

DensitySweep cmd_density_sweep(const std::filesystem::path& checkpoint, const RunConfig& cfg);

CHNET_NS_END
