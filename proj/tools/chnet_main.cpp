#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "chnet/analysis.hpp"
#include "chnet/errors.hpp"

static_assert(!chnet::kDoublePrecision, "the CLI runs the 32-bit build");

// Implemented in a 64-bit translation unit.
int run_gradcheck(std::uint64_t seed, const std::string& out);

namespace {

using namespace chnet;

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string shape = "2,128,80,304";
  std::vector<std::string> overrides;
  std::string split = "val";
  std::string rgb;
  std::string sparse;
  bool verbose = false;
};

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

Shape parse_shape(const std::string& text) {
  std::vector<int> dims;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      dims.push_back(std::stoi(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("invalid --shape '" + text + "' (expected N,C,H,W)");
    }
  }
  if (dims.size() != 4) throw ConfigError("invalid --shape '" + text + "' (expected N,C,H,W)");
  return {dims[0], dims[1], dims[2], dims[3]};
}

RunConfig make_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : RunConfig::load(o.config);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) cfg.train.seed = *o.seed;
  cfg.train.verbose = o.verbose;
  cfg.validate();
  return cfg;
}

void require(const std::string& value, const char* flag, const std::string& cmd) {
  if (value.empty()) throw ConfigError(cmd + " requires " + flag);
}

int dispatch(const std::string& cmd, const Options& o) {
  if (cmd == "gradcheck") return run_gradcheck(o.seed.value_or(1), o.out);
  const RunConfig cfg = make_config(o);
  if (cmd == "train") {
    const std::string dir = o.out.empty() ? "run" : o.out;
    TrainResult r = cmd_train(cfg, dir);
    std::cout << train_log_header() << "\n" << train_log_row(r.history.back()) << "\n";
  } else if (cmd == "eval") {
    require(o.checkpoint, "--checkpoint", cmd);
    emit(cmd_eval(o.checkpoint, cfg, o.split), o.out);
  } else if (cmd == "infer") {
    require(o.checkpoint, "--checkpoint", cmd);
    require(o.rgb, "--rgb", cmd);
    require(o.sparse, "--sparse", cmd);
    require(o.out, "--out", cmd);
    cmd_infer(o.checkpoint, o.rgb, o.sparse, o.out);
  } else if (cmd == "ablate-fusion") {
    FusionAblation a = cmd_ablate_fusion(cfg);
    emit(a.csv(), o.out);
    if (!o.out.empty()) emit(a.runs_csv(), o.out + ".runs.csv");
    const bool ok = a.median_rmse(FusionKind::fast_guidance) < a.median_rmse(FusionKind::sum);
    std::cerr << "median rmse fast_guidance < sum: " << (ok ? "yes" : "no") << "\n";
  } else if (cmd == "ablate-head") {
    emit(cmd_ablate_head(cfg).csv(), o.out);
  } else if (cmd == "bench-guidance") {
    emit(bench_csv(cmd_bench_guidance(parse_shape(o.shape), cfg.analysis.bench_repeats,
                                      cfg.analysis.bench_warmup, cfg.train.seed)),
         o.out);
  } else if (cmd == "fft-diag") {
    require(o.checkpoint, "--checkpoint", cmd);
    SpectrumDiagnostic d = cmd_fft_diag(o.checkpoint, cfg);
    emit(d.csv(), o.out);
    if (!o.out.empty()) emit(d.histogram_csv(), o.out + ".hist.csv");
    if (!d.trained) std::cerr << "warning: checkpoint is untrained\n";
    std::cerr << "low band raised in " << d.enhanced_count() << " of " << d.channels.size()
              << " channels\n";
  } else if (cmd == "density-sweep") {
    require(o.checkpoint, "--checkpoint", cmd);
    DensitySweep s = cmd_density_sweep(o.checkpoint, cfg);
    emit(s.csv(), o.out);
    std::cerr << "rmse degrades with sparsity: " << (s.degrades_with_sparsity() ? "yes" : "no")
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth completion with fast guidance: training and analysis tools"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config, "key = value config file");
  app.add_option("--checkpoint", o.checkpoint, "model checkpoint (.chnt)");
  app.add_option("--out", o.out, "output file, or run directory for train");
  app.add_option("--seed", o.seed, "training / benchmark seed");
  app.add_option("--shape", o.shape, "benchmark input N,C,H,W")->capture_default_str();
  app.add_option("--set", o.overrides, "config override key=value (repeatable)");
  app.add_option("--split", o.split, "split for eval: train | val")->capture_default_str();
  app.add_option("--rgb", o.rgb, "input color image (.ppm) for infer");
  app.add_option("--sparse", o.sparse, "input sparse depth (.pgm) for infer");
  app.add_flag("-v,--verbose", o.verbose, "progress on stderr");

  const std::pair<const char*, const char*> commands[] = {
      {"train", "train a model, writing checkpoints and a CSV log"},
      {"eval", "metrics of a checkpoint on a split"},
      {"infer", "dense depth for one frame"},
      {"ablate-fusion", "compare fusion strategies over several seeds"},
      {"ablate-head", "compare coupled and decoupled heads by region"},
      {"bench-guidance", "time fast guidance against guided-filter fusion"},
      {"fft-diag", "spectra of depth features around the first fusion"},
      {"density-sweep", "RMSE as sparse inputs are thinned"},
      {"gradcheck", "finite-difference gradient suite (64-bit)"},
  };
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return dispatch(cmd, o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
