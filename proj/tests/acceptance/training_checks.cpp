#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>

#include "acceptance.hpp"
#include "chnet/analysis.hpp"

using namespace chnet;
namespace fs = std::filesystem;

namespace acceptance {
namespace {

static_assert(!kDoublePrecision, "training checks run the 32-bit build");

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// RMSE of predicting the mean training depth everywhere.
double constant_baseline_rmse(const Datasets& data) {
  double total = 0;
  long count = 0;
  for (const auto& f : data.train)
    for (Real d : f.gt.vec())
      if (d > 0) total += d, ++count;
  std::vector<std::size_t> all(data.val.size());
  std::iota(all.begin(), all.end(), 0);
  const Batch b = make_batch(data.val, all);
  return compute_metrics(Tensor4::full(b.gt.shape(), static_cast<Real>(total / count)), b.gt)
      .rmse_mm;
}

Outcome desk_learning(const fs::path& config_dir, const fs::path& work) {
  Verdict v(7);
  RunConfig cfg = RunConfig::load(config_dir / "desk.cfg");
  cfg.validate();
  const std::string last = "epoch_" + std::to_string(cfg.train.epochs) + ".chnt";

  auto t0 = std::chrono::steady_clock::now();
  TrainResult a = cmd_train(cfg, work / "desk_a");
  const double secs = seconds_since(t0);
  std::cerr << "  desk run 1: " << fmt("%.0f s", secs) << "\n";
  cmd_train(cfg, work / "desk_b");
  std::cerr << "  desk run 2 done\n";

  const double untrained = a.history.front().val.rmse_mm;
  const double final = a.history.back().val.rmse_mm;
  v.require(final < 0.5 * untrained,
            "final " + fmt("%.1f", final) + " mm vs untrained " + fmt("%.1f", untrained));
  v.require(slurp(work / "desk_a" / "train_log.csv") == slurp(work / "desk_b" / "train_log.csv"),
            "training logs differ between runs");
  v.require(slurp(work / "desk_a" / last) == slurp(work / "desk_b" / last),
            "final checkpoints differ between runs");
  v.require(secs < 15 * 60, "one run took " + fmt("%.0f s", secs));

  v.note("untrained " + fmt("%.1f mm", untrained));
  v.note("final " + fmt("%.1f mm", final));
  v.note("mean-depth baseline " + fmt("%.1f mm", constant_baseline_rmse(load_datasets(cfg))));
  v.note(fmt("%.0f s per run", secs));
  return v.done();
}

Outcome ablations(const fs::path& config_dir) {
  Verdict v(8);
  RunConfig cfg = RunConfig::load(config_dir / "desk.cfg");
  cfg.validate();

  auto t0 = std::chrono::steady_clock::now();
  FusionAblation f = cmd_ablate_fusion(cfg, {FusionKind::sum, FusionKind::fast_guidance});
  std::cerr << "  fusion ablation: " << fmt("%.0f s", seconds_since(t0)) << "\n" << f.csv();
  const double sum = f.median_rmse(FusionKind::sum);
  const double fast = f.median_rmse(FusionKind::fast_guidance);
  v.require(fast < sum, "fast guidance " + fmt("%.1f", fast) + " mm vs sum " + fmt("%.1f", sum));

  t0 = std::chrono::steady_clock::now();
  HeadAblation h = cmd_ablate_head(cfg);
  std::cerr << "  head ablation: " << fmt("%.0f s", seconds_since(t0)) << "\n" << h.csv();
  const double coupled = h.median_rmse(HeadMode::coupled, "total");
  const double decoupled = h.median_rmse(HeadMode::decoupled, "total");
  v.require(decoupled <= 1.05 * coupled,
            "decoupled " + fmt("%.1f", decoupled) + " mm vs coupled " + fmt("%.1f", coupled));

  v.note("sum " + fmt("%.1f", sum) + " / fast " + fmt("%.1f mm", fast));
  for (HeadMode m : {HeadMode::coupled, HeadMode::decoupled}) {
    v.note(to_string(m) + " total/obs/unobs " + fmt("%.1f", h.median_rmse(m, "total")) + "/" +
           fmt("%.1f", h.median_rmse(m, "observed")) + "/" +
           fmt("%.1f mm", h.median_rmse(m, "unobserved")));
  }
  return v.done();
}

Outcome formats(const fs::path& work) {
  Verdict v(10);
  const fs::path dir = work / "formats";
  fs::create_directories(dir);

  // Every 16-bit value once, big-endian.
  std::string pgm = "P5\n256 256\n65535\n";
  for (int i = 0; i < 65536; ++i) pgm += static_cast<char>(i >> 8), pgm += static_cast<char>(i & 255);
  spit(dir / "all.pgm", pgm);
  save_depth_pgm(load_depth_pgm(dir / "all.pgm"), dir / "all2.pgm");
  v.require(slurp(dir / "all2.pgm") == pgm, "PGM round trip changed bytes");

  std::string ppm = "P6\n256 1\n255\n";
  for (int i = 0; i < 768; ++i) ppm += static_cast<char>((i * 7) & 255);
  spit(dir / "all.ppm", ppm);
  save_rgb_ppm(load_rgb_ppm(dir / "all.ppm"), dir / "all2.ppm");
  v.require(slurp(dir / "all2.ppm") == ppm, "PPM round trip changed bytes");

  DepthFrame frame = generate_scene({.seed = 4});
  save_depth_pgm(frame.gt, dir / "gt.pgm");
  save_rgb_ppm(frame.rgb, dir / "rgb.ppm");
  v.require(load_depth_pgm(dir / "gt.pgm") == frame.gt, "scene depth not preserved");
  save_rgb_ppm(load_rgb_ppm(dir / "rgb.ppm"), dir / "rgb2.ppm");
  v.require(slurp(dir / "rgb.ppm") == slurp(dir / "rgb2.ppm"), "scene image round trip changed bytes");

  // Checkpoints, and one resumed step against an uninterrupted one.
  ChNetConfig mc;
  mc.base_width = 4;
  mc.num_stages = 3;
  mc.height = mc.width = 32;
  auto frames = synthetic_frames({.seed = 9, .height = 32, .width = 32, .num_samples = 100}, 4);
  const Batch b1 = make_batch(frames, {0, 1}), b2 = make_batch(frames, {2, 3});
  AdamConfig adam;
  ChNetModel straight = ChNetModel::build(mc, 5);
  AdamState s1;
  train_step(straight, b1, s1, adam, 1e-3);
  save_checkpoint(dir / "mid.chnt", straight, s1, {{"epoch", "0"}});
  Checkpoint c = read_checkpoint(dir / "mid.chnt");
  write_checkpoint(dir / "mid2.chnt", c);
  v.require(slurp(dir / "mid.chnt") == slurp(dir / "mid2.chnt"), "checkpoint rewrite changed bytes");

  ChNetModel resumed = restore_model(c);
  AdamState s2 = restore_adam(c);
  save_checkpoint(dir / "mid3.chnt", resumed, s2, {{"epoch", "0"}});
  v.require(slurp(dir / "mid.chnt") == slurp(dir / "mid3.chnt"), "restored state saves differently");

  const double loss_a = train_step(straight, b2, s1, adam, 1e-3);
  const double loss_b = train_step(resumed, b2, s2, adam, 1e-3);
  v.require(loss_a == loss_b, "resumed loss differs");
  save_checkpoint(dir / "a.chnt", straight, s1);
  save_checkpoint(dir / "b.chnt", resumed, s2);
  v.require(slurp(dir / "a.chnt") == slurp(dir / "b.chnt"), "resumed step state differs");
  v.note("PGM, PPM, checkpoint and resume exact");
  return v.done();
}

}  // namespace

std::vector<Outcome> training_checks(const fs::path& config_dir, const fs::path& work) {
  std::vector<Outcome> out;
  out.push_back(formats(work));
  out.push_back(desk_learning(config_dir, work));
  out.push_back(ablations(config_dir));
  return out;
}

}  // namespace acceptance
