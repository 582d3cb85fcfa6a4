#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chnet/data.hpp"
#include "chnet/model.hpp"
#include "chnet/train.hpp"

CHNET_NS_BEGIN

struct DataConfig {
  std::string root;  // empty: generate synthetic frames
  std::string train_split = "train";
  std::string val_split = "val";
  int train_frames = 200;
  int val_frames = 40;
  std::uint64_t data_seed = 1;
  SceneSpec scene;  // size comes from the model section

  SceneSpec scene_for(const ChNetConfig& model, std::uint64_t seed) const;
};

struct AnalysisConfig {
  std::vector<std::uint64_t> ablation_seeds{1, 2, 3};
  std::vector<double> density_ratios{0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<int> fft_channels;  // empty: the first ten
  int fft_frame = 0;
  int bench_repeats = 11;
  int bench_warmup = 3;
};

/// Everything a command needs, read from `key = value` lines. '#' starts a
/// comment. Unknown keys are rejected.
struct RunConfig {
  ChNetConfig model;
  TrainConfig train;
  DataConfig data;
  AnalysisConfig analysis;

  RunConfig();
  static RunConfig parse(const std::string& text, const std::string& source = "<string>");
  static RunConfig load(const std::filesystem::path& path);

  /// Throws ConfigError for an unknown key or a malformed value.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  void validate() const;
  /// Every key with its current value, one per line.
  std::string to_text() const;

  struct KeyInfo {
    std::string key;
    std::string doc;
  };
  static const std::vector<KeyInfo>& keys();
};

CHNET_NS_END
