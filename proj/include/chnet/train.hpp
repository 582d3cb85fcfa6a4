#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "chnet/data.hpp"
#include "chnet/model.hpp"
#include "chnet/objective.hpp"

CHNET_NS_BEGIN

struct AdamConfig {
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  double weight_decay = 1e-6;
  /// When false, BatchNorm gamma/beta are excluded from weight decay.
  bool decay_batchnorm = true;

  void validate() const;
};

struct AdamState {
  std::map<std::string, Tensor4> m;
  std::map<std::string, Tensor4> v;
  std::int64_t step = 0;
};

/// One Adam update of a single tensor with L2 coupled into the gradient.
/// `t` is the 1-based step used for bias correction.
void adam_update(Tensor4& theta, const Tensor4& grad, Tensor4& m, Tensor4& v,
                 std::int64_t t, const AdamConfig& cfg, double lr, double weight_decay);

/// Applies one step to every parameter using its accumulated gradient.
void adam_step(std::map<std::string, Variable>& params, AdamState& state,
               const AdamConfig& cfg, double lr);

struct ScheduleConfig {
  /// (epoch, factor of the initial rate); a milestone applies from its epoch on.
  std::vector<std::pair<int, double>> milestones{{10, 0.5}, {15, 0.1}, {20, 0.01}};

  void validate() const;
  /// "10:0.5,15:0.1,20:0.01"; an empty string means no milestones.
  static ScheduleConfig parse(const std::string& text);
  std::string str() const;
};

double lr_at(int epoch, const ScheduleConfig& schedule, double lr0);

struct EvalResult {
  MetricsRecord total;
  MetricsRecord observed;    // positions with a sparse input
  MetricsRecord unobserved;  // the rest
  double loss = 0;
};

/// Eval-mode metrics over `frames`. For a decoupled head the merged map is
/// scored; region rows are empty records if a region has no valid gt.
EvalResult evaluate(ChNetModel& model, const std::vector<DepthFrame>& frames,
                    int batch_size);

/// Prediction in meters for a batch (merged map for decoupled heads).
Tensor4 predict(ChNetModel& model, const Tensor4& rgb, const Tensor4& sparse);

/// forward, compose, loss, backward and one Adam step. Returns the loss.
/// Throws NumericalError (parameters untouched) if the loss is not finite.
double train_step(ChNetModel& model, const Batch& batch, AdamState& state,
                  const AdamConfig& cfg, double lr);

struct TrainConfig {
  int epochs = 25;
  int batch_size = 8;
  std::uint64_t seed = 0;
  AdamConfig adam;
  ScheduleConfig schedule;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path log_path;        // empty: no CSV log
  bool verbose = false;
  /// Extra header entries stored in every checkpoint.
  std::map<std::string, std::string> checkpoint_meta;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;  // completed epochs; 0 is the untrained model
  double lr = 0;
  double train_loss = 0;
  MetricsRecord val;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  AdamState state;
};

std::string train_log_header();
std::string train_log_row(const EpochRecord& r);

/// Sample order for one epoch; depends only on (seed, epoch, count).
std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t count);

/// Trains epochs [start_epoch, cfg.epochs). Batches are assembled by a
/// producer thread through a queue holding at most two batches. After each
/// epoch the model is evaluated on `val` and a checkpoint
/// `epoch_<k>.chnt` is written when a directory is configured. When
/// start_epoch is 0 the untrained model is logged as epoch 0.
TrainResult train(ChNetModel& model, const std::vector<DepthFrame>& train_set,
                  const std::vector<DepthFrame>& val_set, const TrainConfig& cfg,
                  AdamState state = {}, int start_epoch = 0);

struct Checkpoint {
  std::map<std::string, std::string> header;
  std::map<std::string, Tensor4> tensors;
};

/// Model parameters, BatchNorm statistics, the model config, optimizer
/// moments and `meta` in the CHNT1 format. Values are stored as float32.
void save_checkpoint(const std::filesystem::path& path, const ChNetModel& model,
                     const AdamState& state,
                     const std::map<std::string, std::string>& meta = {});
Checkpoint read_checkpoint(const std::filesystem::path& path);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Rebuilds the model described by the checkpoint header and loads every
/// stored tensor into it. Throws DataError for missing or mis-shaped tensors.
ChNetModel restore_model(const Checkpoint& ckpt);
AdamState restore_adam(const Checkpoint& ckpt);

CHNET_NS_END
