#include "chnet/analysis.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <random>

#include "chnet/errors.hpp"
#include "chnet/ops.hpp"

CHNET_NS_BEGIN

namespace fs = std::filesystem;

namespace {

// Validation scenes come from a seed stream disjoint from the training one.
constexpr std::uint64_t kValSeedOffset = 0x9e3779b97f4a7c15ULL;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

struct Loaded {
  ChNetModel model;
  bool trained;
};

Loaded load_model(const fs::path& checkpoint) {
  Checkpoint c = read_checkpoint(checkpoint);
  bool trained = false;
  if (auto it = c.header.find("epoch"); it != c.header.end()) {
    try {
      trained = std::stoi(it->second) > 0;
    } catch (const std::exception&) {
      throw DataError("checkpoint has invalid epoch '" + it->second + "'");
    }
  }
  return {restore_model(c), trained};
}

// The config with its model section taken from a loaded checkpoint, so the
// generated frames match the network input size.
RunConfig with_model(const RunConfig& cfg, const ChNetModel& m) {
  RunConfig c = cfg;
  c.model = m.config();
  return c;
}

TrainConfig quiet_copy(const TrainConfig& t) {
  TrainConfig out = t;
  out.checkpoint_dir.clear();
  out.log_path.clear();
  return out;
}

}  // namespace

Datasets load_datasets(const RunConfig& cfg) {
  Datasets d;
  if (cfg.data.root.empty()) {
    d.train = synthetic_frames(cfg.data.scene_for(cfg.model, cfg.data.data_seed),
                               cfg.data.train_frames);
    d.val = synthetic_frames(cfg.data.scene_for(cfg.model, cfg.data.data_seed + kValSeedOffset),
                             cfg.data.val_frames);
    return d;
  }
  d.train = load_split(cfg.data.root, cfg.data.train_split);
  d.val = load_split(cfg.data.root, cfg.data.val_split);
  for (const auto* set : {&d.train, &d.val}) {
    for (const auto& f : *set) {
      if (f.gt.shape().h != cfg.model.height || f.gt.shape().w != cfg.model.width) {
        throw DataError("frame " + f.id + " is " + f.gt.shape().str() + ", model expects " +
                        std::to_string(cfg.model.height) + "x" + std::to_string(cfg.model.width));
      }
    }
  }
  return d;
}

double median(std::vector<double> xs) {
  if (xs.empty()) throw ShapeError("median of an empty list");
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

TrainResult cmd_train(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const Datasets data = load_datasets(cfg);
  fs::create_directories(out_dir);
  {
    std::ofstream f(out_dir / "config.txt");
    f << cfg.to_text();
  }
  ChNetModel model = ChNetModel::build(cfg.model, cfg.train.seed);
  TrainConfig tc = cfg.train;
  tc.checkpoint_dir = out_dir;
  tc.log_path = out_dir / "train_log.csv";
  tc.checkpoint_meta["data_seed"] = std::to_string(cfg.data.data_seed);
  return train(model, data.train, data.val, tc);
}

std::string cmd_eval(const fs::path& checkpoint, const RunConfig& cfg, const std::string& split) {
  Loaded l = load_model(checkpoint);
  const Datasets data = load_datasets(with_model(cfg, l.model));
  const std::vector<DepthFrame>* frames = nullptr;
  if (split == "val") frames = &data.val;
  else if (split == "train") frames = &data.train;
  else throw ConfigError("unknown split '" + split + "' (expected train or val)");
  const EvalResult r = evaluate(l.model, *frames, cfg.train.batch_size);
  return MetricsRecord::csv_header() + "\n" + r.total.csv_row() + "\n";
}

void cmd_infer(const fs::path& checkpoint, const fs::path& rgb_path, const fs::path& sparse_path,
               const fs::path& out) {
  Loaded l = load_model(checkpoint);
  const Tensor4 rgb = load_rgb_ppm(rgb_path);
  const Tensor4 sparse = load_depth_pgm(sparse_path);
  const ChNetConfig& mc = l.model.config();
  if (rgb.shape() != Shape{1, 3, mc.height, mc.width} ||
      sparse.shape() != Shape{1, 1, mc.height, mc.width}) {
    throw DataError("input is " + rgb.shape().str() + " / " + sparse.shape().str() +
                    ", model expects " + std::to_string(mc.height) + "x" +
                    std::to_string(mc.width));
  }
  Tensor4 pred = predict(l.model, rgb, sparse);
  if (!pred.all_finite()) throw NumericalError("prediction contains non-finite values");
  const Real lo = static_cast<Real>(1.0 / kDepthScale), hi = static_cast<Real>(kMaxEncodableDepth);
  for (auto& v : pred.vec()) v = std::clamp(v, lo, hi);
  save_depth_pgm(pred, out);
}

// ---- ablations ----

double FusionAblation::median_rmse(FusionKind f) const {
  std::vector<double> xs;
  for (const auto& r : runs) {
    if (r.fusion == f) xs.push_back(r.val.rmse_mm);
  }
  return median(xs);
}

std::string FusionAblation::csv() const {
  std::string out = "fusion,seeds,median_rmse_mm,min_rmse_mm,max_rmse_mm,median_mae_mm\n";
  for (FusionKind f : variants) {
    std::vector<double> rmse, mae;
    for (const auto& r : runs) {
      if (r.fusion != f) continue;
      rmse.push_back(r.val.rmse_mm);
      mae.push_back(r.val.mae_mm);
    }
    out += to_string(f) + "," + std::to_string(rmse.size()) + "," + fmt("%.4f", median(rmse)) +
           "," + fmt("%.4f", *std::min_element(rmse.begin(), rmse.end())) + "," +
           fmt("%.4f", *std::max_element(rmse.begin(), rmse.end())) + "," +
           fmt("%.4f", median(mae)) + "\n";
  }
  return out;
}

std::string FusionAblation::runs_csv() const {
  std::string out = "fusion,seed," + MetricsRecord::csv_header() + "\n";
  for (const auto& r : runs) {
    out += to_string(r.fusion) + "," + std::to_string(r.seed) + "," + r.val.csv_row() + "\n";
  }
  return out;
}

FusionAblation cmd_ablate_fusion(const RunConfig& cfg, std::vector<FusionKind> variants) {
  cfg.validate();
  const Datasets data = load_datasets(cfg);
  FusionAblation out;
  out.variants = variants;
  for (FusionKind f : variants) {
    for (std::uint64_t seed : cfg.analysis.ablation_seeds) {
      ChNetConfig mc = cfg.model;
      mc.fusion = f;
      ChNetModel model = ChNetModel::build(mc, seed);
      TrainConfig tc = quiet_copy(cfg.train);
      tc.seed = seed;
      TrainResult r = train(model, data.train, data.val, tc);
      out.runs.push_back({f, seed, r.history.back().val});
      if (cfg.train.verbose) {
        std::cerr << "fusion " << to_string(f) << " seed " << seed << " rmse_mm "
                  << out.runs.back().val.rmse_mm << "\n";
      }
    }
  }
  return out;
}

namespace {

const MetricsRecord& region_of(const EvalResult& r, const std::string& region) {
  if (region == "observed") return r.observed;
  if (region == "unobserved") return r.unobserved;
  if (region == "total") return r.total;
  throw ConfigError("unknown region '" + region + "'");
}

}  // namespace

double HeadAblation::median_rmse(HeadMode head, const std::string& region) const {
  std::vector<double> xs;
  for (const auto& r : runs) {
    if (r.head == head) xs.push_back(region_of(r.val, region).rmse_mm);
  }
  return median(xs);
}

std::string HeadAblation::csv() const {
  std::string out = "head,region,median_rmse_mm,median_mae_mm\n";
  for (HeadMode head : {HeadMode::coupled, HeadMode::decoupled}) {
    for (const char* region : {"observed", "unobserved", "total"}) {
      std::vector<double> mae;
      for (const auto& r : runs) {
        if (r.head == head) mae.push_back(region_of(r.val, region).mae_mm);
      }
      out += to_string(head) + "," + region + "," + fmt("%.4f", median_rmse(head, region)) + "," +
             fmt("%.4f", median(mae)) + "\n";
    }
  }
  return out;
}

HeadAblation cmd_ablate_head(const RunConfig& cfg) {
  cfg.validate();
  const Datasets data = load_datasets(cfg);
  HeadAblation out;
  for (HeadMode head : {HeadMode::coupled, HeadMode::decoupled}) {
    for (std::uint64_t seed : cfg.analysis.ablation_seeds) {
      ChNetConfig mc = cfg.model;
      mc.head_mode = head;
      ChNetModel model = ChNetModel::build(mc, seed);
      TrainConfig tc = quiet_copy(cfg.train);
      tc.seed = seed;
      train(model, data.train, data.val, tc);
      out.runs.push_back({head, seed, evaluate(model, data.val, cfg.train.batch_size)});
      if (cfg.train.verbose) {
        std::cerr << "head " << to_string(head) << " seed " << seed << " rmse_mm "
                  << out.runs.back().val.total.rmse_mm << "\n";
      }
    }
  }
  return out;
}

// ---- benchmark ----

namespace {

template <typename F>
BenchRow time_module(const std::string& name, F&& run, int repeats, int warmup) {
  NoGradGuard guard;
  for (int i = 0; i < warmup; ++i) run();
  std::vector<double> times;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    run();
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  BenchRow r;
  r.module = name;
  r.median_s = median(times);
  r.min_s = *std::min_element(times.begin(), times.end());
  r.max_s = *std::max_element(times.begin(), times.end());
  return r;
}

}  // namespace

std::vector<BenchRow> cmd_bench_guidance(const Shape& shape, int repeats, int warmup,
                                         std::uint64_t seed) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw ConfigError("benchmark shape must be positive, got " + shape.str());
  }
  if (repeats < 1 || warmup < 0) throw ConfigError("invalid benchmark repeat counts");
  std::mt19937_64 rng(seed);
  const Variable fi(Tensor4::randn(shape, rng)), fd(Tensor4::randn(shape, rng));

  const GuidanceConfig gcfg{shape.c, 3, Aggregation::mean};
  const GuidanceParams fast = GuidanceParams::init(gcfg, rng);
  BenchRow a = time_module("fast_guidance", [&] { return fast_guidance(fi, fd, fast, gcfg); },
                           repeats, warmup);
  const GuidanceComplexity ca = fast_guidance_complexity(gcfg, shape);
  a.params = ca.params;
  a.macs = ca.total_macs();

  const GuidedFilterFusionParams gf = GuidedFilterFusionParams::init(shape.c, rng);
  BenchRow b = time_module("guided_filter_fusion",
                           [&] { return fuse_guided_filter(fi, fd, gf); }, repeats, warmup);
  const GuidanceComplexity cb = guided_filter_fusion_complexity(shape.c, shape, gf.window);
  b.params = cb.params;
  b.macs = cb.total_macs();
  return {a, b};
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "module,params,macs,median_s,min_s,max_s\n";
  for (const auto& r : rows) {
    out += r.module + "," + std::to_string(r.params) + "," + std::to_string(r.macs) + "," +
           fmt("%.6f", r.median_s) + "," + fmt("%.6f", r.min_s) + "," + fmt("%.6f", r.max_s) +
           "\n";
  }
  return out;
}

// ---- spectrum diagnostic ----

int SpectrumDiagnostic::enhanced_count() const {
  return static_cast<int>(std::count_if(channels.begin(), channels.end(),
                                        [](const ChannelSpectrum& c) { return c.enhanced(); }));
}

std::string SpectrumDiagnostic::csv() const {
  std::string out = "channel,low_band_before,low_band_after,enhanced,trained\n";
  for (const auto& c : channels) {
    out += std::to_string(c.channel) + "," + fmt("%.6f", c.before.low_band_fraction) + "," +
           fmt("%.6f", c.after.low_band_fraction) + "," + (c.enhanced() ? "1" : "0") + "," +
           (trained ? "1" : "0") + "\n";
  }
  return out;
}

std::string SpectrumDiagnostic::histogram_csv() const {
  std::string out = "channel,stage,bin,lo,hi,weight\n";
  for (const auto& c : channels) {
    for (const auto* s : {&c.before, &c.after}) {
      const char* stage = s == &c.before ? "before" : "after";
      for (std::size_t b = 0; b < s->histogram.size(); ++b) {
        out += std::to_string(c.channel) + "," + stage + "," + std::to_string(b) + "," +
               fmt("%.6f", s->bin_edges[b]) + "," + fmt("%.6f", s->bin_edges[b + 1]) + "," +
               fmt("%.6g", s->histogram[b]) + "\n";
      }
    }
  }
  return out;
}

SpectrumDiagnostic cmd_fft_diag(const fs::path& checkpoint, const RunConfig& cfg) {
  Loaded l = load_model(checkpoint);
  const Datasets data = load_datasets(with_model(cfg, l.model));
  const int idx = cfg.analysis.fft_frame;
  if (idx >= static_cast<int>(data.val.size())) {
    throw DataError("fft_frame " + std::to_string(idx) + " out of range for " +
                    std::to_string(data.val.size()) + " validation frames");
  }
  const DepthFrame& f = data.val[idx];
  FeatureTap tap;
  {
    NoGradGuard guard;
    l.model.forward(f.rgb, f.sparse, Mode::eval, &tap);
  }
  std::vector<int> channels = cfg.analysis.fft_channels;
  if (channels.empty()) {
    for (int c = 0; c < std::min(10, tap.before_first_fusion.shape().c); ++c) channels.push_back(c);
  }
  SpectrumDiagnostic d;
  d.trained = l.trained;
  d.frame_id = f.id;
  d.channels = compare_spectra(tap.before_first_fusion, tap.after_first_fusion, channels);
  return d;
}

// ---- density sweep ----

bool DensitySweep::degrades_with_sparsity() const {
  std::vector<Row> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [](const Row& a, const Row& b) { return a.ratio < b.ratio; });
  int inversions = 0;
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const double prev = sorted[i - 1].metrics.rmse_mm, cur = sorted[i].metrics.rmse_mm;
    if (cur > prev) {
      ++inversions;
      if (cur > 1.02 * prev) return false;
    }
  }
  return inversions <= 1;
}

std::string DensitySweep::csv() const {
  std::string out = "ratio,valid_fraction," + MetricsRecord::csv_header() + "\n";
  for (const auto& r : rows) {
    out += fmt("%.4f", r.ratio) + "," + fmt("%.6f", r.valid_fraction) + "," +
           r.metrics.csv_row() + "\n";
  }
  return out;
}

DensitySweep cmd_density_sweep(const fs::path& checkpoint, const RunConfig& cfg) {
  Loaded l = load_model(checkpoint);
  const Datasets data = load_datasets(with_model(cfg, l.model));
  DensitySweep sweep;
  for (double ratio : cfg.analysis.density_ratios) {
    std::vector<DepthFrame> thinned = data.val;
    double before = 0, after = 0;
    for (std::size_t i = 0; i < thinned.size(); ++i) {
      // the per-frame seed does not depend on the ratio, so lower ratios keep
      // subsets of the pixels kept at higher ones
      const Tensor4& src = data.val[i].sparse;
      thinned[i].sparse = density_subsample(src, ratio, cfg.train.seed * 7919 + i);
      for (std::size_t j = 0; j < src.size(); ++j) {
        before += src[j] > 0;
        after += thinned[i].sparse[j] > 0;
      }
    }
    const EvalResult r = evaluate(l.model, thinned, cfg.train.batch_size);
    sweep.rows.push_back({ratio, before > 0 ? after / before : 0.0, r.total});
  }
  return sweep;
}

CHNET_NS_END
