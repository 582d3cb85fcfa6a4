#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>

#include "chnet/train.hpp"

using namespace chnet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ChNetConfig small_model() {
  ChNetConfig cfg;
  cfg.base_width = 4;
  cfg.num_stages = 3;
  cfg.height = cfg.width = 32;
  return cfg;
}

void expect_same_state(ChNetModel& a, ChNetModel& b) {
  for (const auto& [name, p] : a.parameters()) {
    EXPECT_EQ(p.value(), b.param(name).value()) << name;
  }
  for (const auto& [name, s] : a.batchnorm_states()) {
    EXPECT_EQ(s.running_mean, b.batchnorm_states().at(name).running_mean) << name;
    EXPECT_EQ(s.running_var, b.batchnorm_states().at(name).running_var) << name;
  }
}

class F32Checkpoint : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("chnet_f32_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST_F(F32Checkpoint, RoundTripIsExact) {
  ChNetModel m = ChNetModel::build(small_model(), 3);
  auto frames = synthetic_frames({.seed = 1, .height = 32, .width = 32, .num_samples = 100}, 4);
  AdamState state;
  train_step(m, make_batch(frames, {0, 1}), state, AdamConfig{}, 1e-3);
  save_checkpoint(dir_ / "a.chnt", m, state, {{"epoch", "1"}});
  Checkpoint c = read_checkpoint(dir_ / "a.chnt");
  EXPECT_EQ(c.header.at("epoch"), "1");
  write_checkpoint(dir_ / "b.chnt", c);
  EXPECT_EQ(slurp(dir_ / "a.chnt"), slurp(dir_ / "b.chnt"));

  ChNetModel r = restore_model(c);
  expect_same_state(m, r);
  AdamState rs = restore_adam(c);
  EXPECT_EQ(rs.step, 1);
  for (const auto& [name, t] : state.m) EXPECT_EQ(rs.m.at(name), t) << name;
  for (const auto& [name, t] : state.v) EXPECT_EQ(rs.v.at(name), t) << name;
}

TEST_F(F32Checkpoint, ResumedStepMatchesUninterrupted) {
  auto frames = synthetic_frames({.seed = 2, .height = 32, .width = 32, .num_samples = 100}, 4);
  const Batch b1 = make_batch(frames, {0, 1}), b2 = make_batch(frames, {2, 3});
  AdamConfig cfg;

  ChNetModel straight = ChNetModel::build(small_model(), 4);
  AdamState s1;
  train_step(straight, b1, s1, cfg, 1e-3);
  save_checkpoint(dir_ / "mid.chnt", straight, s1);
  const double loss_a = train_step(straight, b2, s1, cfg, 1e-3);

  Checkpoint c = read_checkpoint(dir_ / "mid.chnt");
  ChNetModel resumed = restore_model(c);
  AdamState s2 = restore_adam(c);
  const double loss_b = train_step(resumed, b2, s2, cfg, 1e-3);
  EXPECT_EQ(loss_a, loss_b);
  expect_same_state(straight, resumed);
}

TEST_F(F32Checkpoint, ResumedEpochMatchesUninterrupted) {
  auto frames = synthetic_frames({.seed = 5, .height = 32, .width = 32, .num_samples = 100}, 6);
  auto val = synthetic_frames({.seed = 6, .height = 32, .width = 32, .num_samples = 100}, 2);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 2;
  cfg.seed = 3;
  cfg.checkpoint_dir = dir_ / "full";
  ChNetModel full = ChNetModel::build(small_model(), 8);
  TrainResult a = train(full, frames, val, cfg);

  Checkpoint c = read_checkpoint(dir_ / "full" / "epoch_1.chnt");
  ChNetModel resumed = restore_model(c);
  cfg.checkpoint_dir = dir_ / "resumed";
  TrainResult b = train(resumed, frames, val, cfg, restore_adam(c), std::stoi(c.header.at("epoch")));
  ASSERT_EQ(b.history.size(), 1u);
  EXPECT_EQ(a.history.back().train_loss, b.history.back().train_loss);
  EXPECT_EQ(a.history.back().val.rmse_mm, b.history.back().val.rmse_mm);
  expect_same_state(full, resumed);
  EXPECT_EQ(slurp(dir_ / "full" / "epoch_2.chnt"), slurp(dir_ / "resumed" / "epoch_2.chnt"));
}
