#include "chnet/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, int>) out = std::stoi(v, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
      out = std::stoull(v, &used);
    } else out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("invalid value for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("invalid boolean for " + key + ": '" + v + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<T>(key, item));
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::ostringstream out;
  for (std::size_t i = 0; i < xs.size(); ++i) out << (i ? "," : "") << xs[i];
  return out.str();
}

std::string num(double v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

struct Entry {
  const char* key;
  const char* doc;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define INT_KEY(name, field, doc)                                                  \
  Entry{name, doc, [](RunConfig& c, const std::string& v) { c.field = parse_number<int>(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }}
#define REAL_KEY(name, field, doc)                                                 \
  Entry{name, doc, [](RunConfig& c, const std::string& v) { c.field = parse_number<double>(name, v); }, \
        [](const RunConfig& c) { return num(c.field); }}
#define SEED_KEY(name, field, doc)                                                 \
  Entry{name, doc,                                                                 \
        [](RunConfig& c, const std::string& v) { c.field = parse_number<std::uint64_t>(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.field); }}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      INT_KEY("base_width", model.base_width, "channels of the first encoder stage"),
      INT_KEY("num_stages", model.num_stages, "residual stages per encoder"),
      INT_KEY("expansion_ratio", model.expansion_ratio, "guidance sub-spaces N"),
      Entry{"head_mode", "decoupled | coupled",
            [](RunConfig& c, const std::string& v) { c.model.head_mode = parse_head_mode(v); },
            [](const RunConfig& c) { return to_string(c.model.head_mode); }},
      Entry{"aggregation", "mean | max | none",
            [](RunConfig& c, const std::string& v) { c.model.aggregation = parse_aggregation(v); },
            [](const RunConfig& c) { return to_string(c.model.aggregation); }},
      Entry{"fusion", "fast_guidance | sum | concat | guided_filter",
            [](RunConfig& c, const std::string& v) { c.model.fusion = parse_fusion(v); },
            [](const RunConfig& c) { return to_string(c.model.fusion); }},
      INT_KEY("height", model.height, "input height, divisible by 2^(num_stages+1)"),
      INT_KEY("width", model.width, "input width, divisible by 2^(num_stages+1)"),

      INT_KEY("epochs", train.epochs, "training epochs"),
      INT_KEY("batch_size", train.batch_size, "mini-batch size"),
      SEED_KEY("seed", train.seed, "model initialization and shuffling seed"),
      REAL_KEY("lr0", train.adam.lr0, "initial learning rate"),
      REAL_KEY("beta1", train.adam.beta1, "Adam first-moment decay"),
      REAL_KEY("beta2", train.adam.beta2, "Adam second-moment decay"),
      REAL_KEY("adam_eps", train.adam.eps, "Adam denominator epsilon"),
      REAL_KEY("weight_decay", train.adam.weight_decay, "L2 coefficient added to gradients"),
      Entry{"decay_batchnorm", "apply weight decay to BatchNorm gamma/beta",
            [](RunConfig& c, const std::string& v) {
              c.train.adam.decay_batchnorm = parse_bool("decay_batchnorm", v);
            },
            [](const RunConfig& c) { return std::string(c.train.adam.decay_batchnorm ? "true" : "false"); }},
      Entry{"milestones", "epoch:factor list, factors of lr0",
            [](RunConfig& c, const std::string& v) { c.train.schedule = ScheduleConfig::parse(v); },
            [](const RunConfig& c) { return c.train.schedule.str(); }},

      Entry{"dataset_root", "directory with split folders; empty for synthetic frames",
            [](RunConfig& c, const std::string& v) { c.data.root = v; },
            [](const RunConfig& c) { return c.data.root; }},
      Entry{"train_split", "training split folder",
            [](RunConfig& c, const std::string& v) { c.data.train_split = v; },
            [](const RunConfig& c) { return c.data.train_split; }},
      Entry{"val_split", "validation split folder",
            [](RunConfig& c, const std::string& v) { c.data.val_split = v; },
            [](const RunConfig& c) { return c.data.val_split; }},
      INT_KEY("train_frames", data.train_frames, "synthetic training frames"),
      INT_KEY("val_frames", data.val_frames, "synthetic validation frames"),
      SEED_KEY("data_seed", data.data_seed, "synthetic scene seed"),
      INT_KEY("num_objects", data.scene.num_objects, "boxes per synthetic scene"),
      INT_KEY("num_samples", data.scene.num_samples, "sparse samples per synthetic frame"),
      Entry{"sparse_pattern", "random | scanline",
            [](RunConfig& c, const std::string& v) { c.data.scene.pattern = parse_sparse_pattern(v); },
            [](const RunConfig& c) { return to_string(c.data.scene.pattern); }},
      INT_KEY("scanline_stride", data.scene.scanline_stride, "row stride of the scanline pattern"),
      REAL_KEY("min_depth", data.scene.min_depth, "nearest synthetic depth (m)"),
      REAL_KEY("max_depth", data.scene.max_depth, "farthest synthetic depth (m)"),
      REAL_KEY("noise", data.scene.noise, "color noise standard deviation"),

      Entry{"ablation_seeds", "seeds for ablation runs",
            [](RunConfig& c, const std::string& v) {
              c.analysis.ablation_seeds = parse_list<std::uint64_t>("ablation_seeds", v);
            },
            [](const RunConfig& c) { return join(c.analysis.ablation_seeds); }},
      Entry{"density_ratios", "keep probabilities for the density sweep",
            [](RunConfig& c, const std::string& v) {
              c.analysis.density_ratios = parse_list<double>("density_ratios", v);
            },
            [](const RunConfig& c) { return join(c.analysis.density_ratios); }},
      Entry{"fft_channels", "channels for the spectrum diagnostic; empty for the first ten",
            [](RunConfig& c, const std::string& v) {
              c.analysis.fft_channels = parse_list<int>("fft_channels", v);
            },
            [](const RunConfig& c) { return join(c.analysis.fft_channels); }},
      INT_KEY("fft_frame", analysis.fft_frame, "validation frame for the spectrum diagnostic"),
      INT_KEY("bench_repeats", analysis.bench_repeats, "timed benchmark runs"),
      INT_KEY("bench_warmup", analysis.bench_warmup, "untimed warmup runs"),
  };
  return table;
}

#undef INT_KEY
#undef REAL_KEY
#undef SEED_KEY

const Entry& find(const std::string& key) {
  for (const auto& e : entries()) {
    if (key == e.key) return e;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

SceneSpec DataConfig::scene_for(const ChNetConfig& model, std::uint64_t seed) const {
  SceneSpec s = scene;
  s.height = model.height;
  s.width = model.width;
  s.seed = seed;
  return s;
}

RunConfig::RunConfig() {
  model.base_width = 8;
  train.epochs = 30;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  find(key).set(*this, value);
}

std::string RunConfig::get(const std::string& key) const { return find(key).get(*this); }

RunConfig RunConfig::parse(const std::string& text, const std::string& source) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path.string());
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.scene_for(model, 0).validate();
  if (data.train_frames < 1 || data.val_frames < 1) throw ConfigError("frame counts must be >= 1");
  if (analysis.ablation_seeds.empty()) throw ConfigError("ablation_seeds must not be empty");
  if (analysis.density_ratios.empty()) throw ConfigError("density_ratios must not be empty");
  for (double r : analysis.density_ratios) {
    if (!(r > 0 && r <= 1)) throw ConfigError("density ratios must lie in (0, 1]");
  }
  for (int c : analysis.fft_channels) {
    if (c < 0) throw ConfigError("fft_channels must be >= 0");
  }
  if (analysis.fft_frame < 0) throw ConfigError("fft_frame must be >= 0");
  if (analysis.bench_repeats < 1 || analysis.bench_warmup < 0) {
    throw ConfigError("bench_repeats must be >= 1 and bench_warmup >= 0");
  }
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& e : entries()) out += std::string(e.key) + " = " + e.get(*this) + "\n";
  return out;
}

const std::vector<RunConfig::KeyInfo>& RunConfig::keys() {
  static const std::vector<KeyInfo> info = [] {
    std::vector<KeyInfo> v;
    for (const auto& e : entries()) v.push_back({e.key, e.doc});
    return v;
  }();
  return info;
}

CHNET_NS_END
