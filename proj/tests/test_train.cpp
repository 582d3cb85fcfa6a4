#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "chnet/errors.hpp"
#include "chnet/ops.hpp"
#include "chnet/train.hpp"

using namespace chnet;
namespace fs = std::filesystem;

namespace {

// Sets p.grad to g through a linear loss.
void set_grad(Variable& p, const Tensor4& g) {
  p.zero_grad();
  sum(mul(p, Variable(g))).backward();
}

struct ScalarAdam {
  double theta, m = 0, v = 0;
  int t = 0;
  void step(double g, double lr, double wd) {
    ++t;
    g += wd * theta;
    m = 0.9 * m + 0.1 * g;
    v = 0.99 * v + 0.01 * g * g;
    const double mhat = m / (1 - std::pow(0.9, t));
    const double vhat = v / (1 - std::pow(0.99, t));
    theta -= lr * mhat / (std::sqrt(vhat) + 1e-8);
  }
};

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("chnet_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ChNetConfig small_model() {
  ChNetConfig cfg;
  cfg.base_width = 4;
  cfg.num_stages = 3;
  cfg.height = cfg.width = 32;
  return cfg;
}

SceneSpec small_scene(std::uint64_t seed) {
  return {.seed = seed, .height = 32, .width = 32, .num_samples = 120};
}

}  // namespace

TEST(Adam, ZeroGradientWithoutDecayIsNoop) {
  std::map<std::string, Variable> params{{"w", Variable(Tensor4({1, 1, 2, 2}, {1, -2, 3, 4}), true)}};
  AdamConfig cfg;
  cfg.weight_decay = 0;
  AdamState state;
  const Tensor4 before = params["w"].value();
  adam_step(params, state, cfg, 1e-3);
  EXPECT_EQ(params["w"].value(), before);
  EXPECT_EQ(state.step, 1);
}

TEST(Adam, WorkedExample) {
  Tensor4 theta = Tensor4::scalar(1), grad = Tensor4::scalar(1);
  Tensor4 m = Tensor4::scalar(0), v = Tensor4::scalar(0);
  AdamConfig cfg;
  adam_update(theta, grad, m, v, 1, cfg, 1e-3, 0.0);
  EXPECT_NEAR(m[0], 0.1, 1e-15);
  EXPECT_NEAR(v[0], 0.01, 1e-15);
  EXPECT_NEAR(theta[0], 1 - 0.001 / (1 + 1e-8), 1e-15);
  EXPECT_NEAR(theta[0], 0.999, 1e-8);
}

TEST(Adam, MatchesScalarRecurrence) {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 5; ++trial) {
    const double init = gauss(rng);
    std::map<std::string, Variable> params{{"p", Variable(Tensor4::scalar(init), true)}};
    AdamConfig cfg;
    AdamState state;
    ScalarAdam ref{init};
    for (int step = 0; step < 100; ++step) {
      const double g = gauss(rng);
      const double lr = step < 50 ? 1e-3 : 5e-4;
      set_grad(params["p"], Tensor4::scalar(g));
      adam_step(params, state, cfg, lr);
      ref.step(g, lr, 1e-6);
      ASSERT_NEAR(params["p"].value()[0], ref.theta, 1e-12) << step;
    }
  }
}

TEST(Adam, DeterministicAndShapeChecked) {
  auto run = [] {
    std::map<std::string, Variable> params{{"a", Variable(Tensor4({1, 2, 3, 3}, 0.5), true)}};
    AdamState state;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 3; ++i) {
      set_grad(params["a"], Tensor4::randn({1, 2, 3, 3}, rng));
      adam_step(params, state, AdamConfig{}, 1e-3);
    }
    return params["a"].value();
  };
  EXPECT_EQ(run(), run());
  Tensor4 t({1, 1, 2, 2}), g({1, 1, 2, 3}), m({1, 1, 2, 2}), v({1, 1, 2, 2});
  EXPECT_THROW(adam_update(t, g, m, v, 1, AdamConfig{}, 1e-3, 0), ShapeError);
}

TEST(Adam, BatchNormDecayExclusion) {
  std::map<std::string, Variable> params{
      {"x.bn.gamma", Variable(Tensor4::scalar(1), true)},
      {"x.conv.weight", Variable(Tensor4::scalar(1), true)}};
  AdamConfig cfg;
  cfg.weight_decay = 0.1;
  cfg.decay_batchnorm = false;
  AdamState state;
  adam_step(params, state, cfg, 1e-3);
  EXPECT_EQ(params["x.bn.gamma"].value()[0], 1.0);
  EXPECT_LT(params["x.conv.weight"].value()[0], 1.0);
}

TEST(Schedule, MilestoneValues) {
  ScheduleConfig s;
  EXPECT_DOUBLE_EQ(lr_at(5, s, 1e-3), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(12, s, 1e-3), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(17, s, 1e-3), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(22, s, 1e-3), 1e-5);
  EXPECT_DOUBLE_EQ(lr_at(10, s, 1e-3), 5e-4);
  EXPECT_DOUBLE_EQ(lr_at(9, s, 1e-3), 1e-3);
  std::set<double> seen;
  double prev = 1;
  for (int e = 0; e < 25; ++e) {
    const double lr = lr_at(e, s, 1e-3);
    EXPECT_LE(lr, prev);
    prev = lr;
    seen.insert(lr);
  }
  EXPECT_EQ(seen, (std::set<double>{1e-3 * 0.01, 1e-3 * 0.1, 1e-3 * 0.5, 1e-3}));
}

TEST(Schedule, ParseAndValidate) {
  ScheduleConfig s = ScheduleConfig::parse("10:0.5,15:0.1,20:0.01");
  EXPECT_EQ(s.milestones, ScheduleConfig{}.milestones);
  EXPECT_EQ(ScheduleConfig::parse(s.str()).milestones, s.milestones);
  EXPECT_TRUE(ScheduleConfig::parse("").milestones.empty());
  EXPECT_THROW(ScheduleConfig::parse("10:0.5,5:0.1"), ConfigError);
  EXPECT_THROW(ScheduleConfig::parse("10:0.5,15:0.7"), ConfigError);
  EXPECT_THROW(ScheduleConfig::parse("ten:0.5"), ConfigError);
}

TEST(Training, EpochOrderIsSeededPermutation) {
  auto a = epoch_order(7, 0, 50);
  EXPECT_EQ(a, epoch_order(7, 0, 50));
  EXPECT_NE(a, epoch_order(7, 1, 50));
  EXPECT_NE(a, epoch_order(8, 0, 50));
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], i);
}

TEST(Training, SmokeRunIsDeterministic) {
  const fs::path dir = temp_dir("smoke");
  auto frames = synthetic_frames(small_scene(1), 4);
  auto val = synthetic_frames(small_scene(2), 2);
  auto run = [&](const fs::path& out) {
    ChNetModel m = ChNetModel::build(small_model(), 5);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 2;
    cfg.seed = 9;
    cfg.checkpoint_dir = out;
    cfg.log_path = out / "log.csv";
    return train(m, frames, val, cfg);
  };
  TrainResult a = run(dir / "a"), b = run(dir / "b");
  ASSERT_EQ(a.history.size(), 2u);
  EXPECT_TRUE(std::isfinite(a.history[1].train_loss));
  EXPECT_EQ(a.history[1].train_loss, b.history[1].train_loss);
  EXPECT_EQ(a.history[1].val.rmse_mm, b.history[1].val.rmse_mm);
  EXPECT_EQ(a.state.step, 2);
  EXPECT_TRUE(fs::exists(dir / "a" / "epoch_1.chnt"));
  std::ifstream log(dir / "a" / "log.csv");
  std::string header, row0, row1;
  std::getline(log, header);
  std::getline(log, row0);
  std::getline(log, row1);
  EXPECT_EQ(header, "epoch,lr,train_loss,rmse_mm,mae_mm,irmse,imae,rel,d1,d2,d3");
  EXPECT_EQ(row0.substr(0, 2), "0,");
  EXPECT_EQ(row1.substr(0, 2), "1,");
  fs::remove_all(dir);
}

TEST(Training, NonFiniteLossNamesTheBatch) {
  auto frames = synthetic_frames(small_scene(3), 4);
  for (auto& v : frames[2].rgb.vec()) v = std::nan("");
  ChNetModel m = ChNetModel::build(small_model(), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1;
  try {
    train(m, frames, {frames[0]}, cfg);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find(frames[2].id), std::string::npos) << e.what();
  }
  EXPECT_THROW(train(m, {}, {frames[0]}, cfg), DataError);
}

TEST(Training, LossDecreasesOverFirstEpochs) {
  auto frames = synthetic_frames(small_scene(11), 24);
  auto val = synthetic_frames(small_scene(12), 4);
  int decreasing = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    ChNetModel m = ChNetModel::build(small_model(), seed);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.seed = seed;
    TrainResult r = train(m, frames, val, cfg);
    decreasing += r.history[2].train_loss < r.history[1].train_loss &&
                  r.history[3].train_loss < r.history[2].train_loss;
  }
  EXPECT_GE(decreasing, 2);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const fs::path dir = temp_dir("corrupt");
  ChNetModel m = ChNetModel::build(small_model(), 1);
  save_checkpoint(dir / "ok.chnt", m, {});
  std::ifstream in(dir / "ok.chnt", std::ios::binary);
  std::string bytes{std::istreambuf_iterator<char>(in), {}};
  std::ofstream(dir / "trunc.chnt", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
  std::string bad = bytes;
  bad[4] = '2';
  std::ofstream(dir / "magic.chnt", std::ios::binary) << bad;
  EXPECT_THROW(read_checkpoint(dir / "trunc.chnt"), DataError);
  EXPECT_THROW(read_checkpoint(dir / "magic.chnt"), DataError);
  EXPECT_THROW(read_checkpoint(dir / "none.chnt"), DataError);
  Checkpoint c = read_checkpoint(dir / "ok.chnt");
  c.tensors.erase(c.tensors.begin());
  EXPECT_THROW(restore_model(c), DataError);
  fs::remove_all(dir);
}
