#include "chnet/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <exception>
#include <fstream>
#include <iostream>
#include <iterator>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

namespace fs = std::filesystem;

void AdamConfig::validate() const {
  if (!(lr0 > 0)) throw ConfigError("lr0 must be > 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0)) throw ConfigError("Adam eps must be > 0");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be >= 0");
}

void adam_update(Tensor4& theta, const Tensor4& grad, Tensor4& m, Tensor4& v,
                 std::int64_t t, const AdamConfig& cfg, double lr, double weight_decay) {
  if (grad.shape() != theta.shape() || m.shape() != theta.shape() ||
      v.shape() != theta.shape()) {
    throw ShapeError("adam_update: shape mismatch for " + theta.shape().str());
  }
  if (t < 1) throw ShapeError("adam_update: step must be >= 1");
  const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double p = theta[i];
    const double g = grad[i] + weight_decay * p;
    const double mi = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
    const double vi = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
    m[i] = static_cast<Real>(mi);
    v[i] = static_cast<Real>(vi);
    theta[i] = static_cast<Real>(p - lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
  }
}

namespace {

bool is_batchnorm_param(const std::string& name) {
  auto ends_with = [&](std::string_view s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".gamma") || ends_with(".beta");
}

}  // namespace

void adam_step(std::map<std::string, Variable>& params, AdamState& state,
               const AdamConfig& cfg, double lr) {
  ++state.step;
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    Tensor4& theta = p.mutable_value();
    auto [mit, mnew] = state.m.try_emplace(name, theta.shape());
    auto [vit, vnew] = state.v.try_emplace(name, theta.shape());
    (void)mnew;
    (void)vnew;
    const double wd = cfg.decay_batchnorm || !is_batchnorm_param(name) ? cfg.weight_decay : 0.0;
    adam_update(theta, p.grad(), mit->second, vit->second, state.step, cfg, lr, wd);
  }
}

void ScheduleConfig::validate() const {
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    const auto [epoch, factor] = milestones[i];
    if (epoch < 0 || !(factor > 0)) throw ConfigError("milestones need epoch >= 0 and factor > 0");
    if (i > 0 && (epoch <= milestones[i - 1].first || factor >= milestones[i - 1].second)) {
      throw ConfigError("milestone epochs must increase and factors decrease");
    }
  }
}

ScheduleConfig ScheduleConfig::parse(const std::string& text) {
  ScheduleConfig s;
  s.milestones.clear();
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (item.empty()) continue;
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      std::size_t used = 0;
      const int epoch = std::stoi(item.substr(0, colon), &used);
      if (used != colon) throw std::invalid_argument(item);
      const std::string rest = item.substr(colon + 1);
      const double factor = std::stod(rest, &used);
      if (used != rest.size()) throw std::invalid_argument(item);
      s.milestones.emplace_back(epoch, factor);
    } catch (const std::exception&) {
      throw ConfigError("invalid milestone '" + item + "' (expected epoch:factor)");
    }
  }
  s.validate();
  return s;
}

std::string ScheduleConfig::str() const {
  std::string out;
  for (const auto& [epoch, factor] : milestones) {
    if (!out.empty()) out += ',';
    std::ostringstream f;
    f << factor;
    out += std::to_string(epoch) + ":" + f.str();
  }
  return out;
}

double lr_at(int epoch, const ScheduleConfig& schedule, double lr0) {
  double factor = 1;
  for (const auto& [e, f] : schedule.milestones) {
    if (e <= epoch) factor = f;
  }
  return lr0 * factor;
}

namespace {

Variable merged_output(const Prediction& p, const Tensor4& sparse) {
  if (!p.decoupled()) return p.observed;
  return decoupled_compose(p.observed, p.unobserved, validity_mask(sparse)).merged;
}

std::vector<std::vector<std::size_t>> chunk(const std::vector<std::size_t>& order,
                                            int batch_size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < order.size(); i += batch_size) {
    const auto end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + i, order.begin() + end);
  }
  return out;
}

}  // namespace

Tensor4 predict(ChNetModel& model, const Tensor4& rgb, const Tensor4& sparse) {
  NoGradGuard guard;
  Prediction p = model.forward(rgb, sparse, Mode::eval);
  return merged_output(p, sparse).value();
}

EvalResult evaluate(ChNetModel& model, const std::vector<DepthFrame>& frames,
                    int batch_size) {
  if (frames.empty()) throw DataError("evaluate: no frames");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  MetricsAccumulator total, observed, unobserved;
  double loss_sum = 0;
  long long loss_count = 0;
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  for (const auto& idx : chunk(order, batch_size)) {
    Batch b = make_batch(frames, idx);
    Tensor4 pred = predict(model, b.rgb, b.sparse);
    Tensor4 obs = validity_mask(b.sparse), unobs = obs;
    for (auto& v : unobs.vec()) v = 1 - v;
    total.add(pred, b.gt);
    observed.add(pred, b.gt, &obs);
    unobserved.add(pred, b.gt, &unobs);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (b.gt[i] > 0) {
        const double d = static_cast<double>(pred[i]) - b.gt[i];
        loss_sum += d * d;
        ++loss_count;
      }
    }
  }
  if (total.empty()) throw DataError("evaluate: no valid ground truth");
  EvalResult r;
  r.total = total.result();
  if (!observed.empty()) r.observed = observed.result();
  if (!unobserved.empty()) r.unobserved = unobserved.result();
  r.loss = loss_sum / static_cast<double>(loss_count);
  return r;
}

double train_step(ChNetModel& model, const Batch& batch, AdamState& state,
                  const AdamConfig& cfg, double lr) {
  model.zero_grad();
  Prediction p = model.forward(batch.rgb, batch.sparse, Mode::train);
  Variable loss = masked_l2_loss(merged_output(p, batch.sparse), batch.gt);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) {
    std::string ids;
    for (const auto& id : batch.ids) ids += (ids.empty() ? "" : " ") + id;
    throw NumericalError("non-finite loss " + std::to_string(value) + " on batch [" + ids + "]");
  }
  loss.backward();
  adam_step(model.parameters(), state, cfg, lr);
  return value;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  adam.validate();
  schedule.validate();
}

std::string train_log_header() {
  return "epoch,lr,train_loss,rmse_mm,mae_mm,irmse,imae,rel,d1,d2,d3";
}

std::string train_log_row(const EpochRecord& r) {
  char buf[256];
  const MetricsRecord& m = r.val;
  std::snprintf(buf, sizeof buf, "%d,%.6g,%.6f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f",
                r.epoch, r.lr, r.train_loss, m.rmse_mm, m.mae_mm, m.irmse_per_km,
                m.imae_per_km, m.rel, m.delta1, m.delta2, m.delta3);
  return buf;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace {

// Single-producer queue of at most `capacity` batches.
class BatchQueue {
 public:
  explicit BatchQueue(std::size_t capacity) : capacity_(capacity) {}

  void push(Batch b) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
    if (closed_) return;
    items_.push_back(std::move(b));
    not_empty_.notify_one();
  }
  std::optional<Batch> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || done_; });
    if (items_.empty()) return std::nullopt;
    Batch b = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return b;
  }
  void finish() {
    std::lock_guard lock(mu_);
    done_ = true;
    not_empty_.notify_all();
  }
  // Consumer side abort: unblocks a waiting producer.
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<Batch> items_;
  std::mutex mu_;
  std::condition_variable not_full_, not_empty_;
  bool done_ = false, closed_ = false;
};

double mean_train_loss(ChNetModel& model, const std::vector<DepthFrame>& frames, int batch_size) {
  std::vector<std::size_t> order(frames.size());
  std::iota(order.begin(), order.end(), 0);
  double sum = 0;
  std::size_t n = 0;
  NoGradGuard guard;
  for (const auto& idx : chunk(order, batch_size)) {
    Batch b = make_batch(frames, idx);
    Prediction p = model.forward(b.rgb, b.sparse, Mode::eval);
    sum += masked_l2_loss(merged_output(p, b.sparse), b.gt).value()[0] * idx.size();
    n += idx.size();
  }
  return sum / static_cast<double>(n);
}

void append_line(const fs::path& path, const std::string& line, bool truncate) {
  if (path.empty()) return;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, truncate ? std::ios::trunc : std::ios::app);
  if (!out) throw DataError("cannot write " + path.string());
  out << line << "\n";
}

}  // namespace

TrainResult train(ChNetModel& model, const std::vector<DepthFrame>& train_set,
                  const std::vector<DepthFrame>& val_set, const TrainConfig& cfg,
                  AdamState state, int start_epoch) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  if (val_set.empty()) throw DataError("validation set is empty");
  TrainResult result;
  if (!cfg.checkpoint_dir.empty()) fs::create_directories(cfg.checkpoint_dir);

  if (start_epoch == 0) {
    EpochRecord initial{0, lr_at(0, cfg.schedule, cfg.adam.lr0),
                        mean_train_loss(model, train_set, cfg.batch_size),
                        evaluate(model, val_set, cfg.batch_size).total};
    append_line(cfg.log_path, train_log_header(), true);
    append_line(cfg.log_path, train_log_row(initial), false);
    result.history.push_back(initial);
    if (cfg.verbose) std::cerr << "epoch 0 rmse_mm " << initial.val.rmse_mm << "\n";
  }

  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.schedule, cfg.adam.lr0);
    const auto batches = chunk(epoch_order(cfg.seed, epoch, train_set.size()), cfg.batch_size);
    BatchQueue queue(2);
    std::exception_ptr producer_error;
    std::jthread producer([&] {
      try {
        for (const auto& idx : batches) queue.push(make_batch(train_set, idx));
      } catch (...) {
        producer_error = std::current_exception();
      }
      queue.finish();
    });
    double loss_sum = 0;
    std::size_t seen = 0;
    try {
      while (auto batch = queue.pop()) {
        loss_sum += train_step(model, *batch, state, cfg.adam, lr) * batch->ids.size();
        seen += batch->ids.size();
      }
    } catch (const NumericalError& e) {
      queue.close();
      if (!cfg.checkpoint_dir.empty()) {
        append_line(cfg.checkpoint_dir / "nonfinite_batch.txt",
                    "epoch " + std::to_string(epoch + 1) + ": " + e.what(), true);
      }
      throw NumericalError("epoch " + std::to_string(epoch + 1) + ": " + e.what());
    } catch (...) {
      queue.close();
      throw;
    }
    producer.join();
    if (producer_error) std::rethrow_exception(producer_error);
    EpochRecord rec{epoch + 1, lr, loss_sum / static_cast<double>(seen),
                    evaluate(model, val_set, cfg.batch_size).total};
    append_line(cfg.log_path, train_log_row(rec), false);
    result.history.push_back(rec);
    if (cfg.verbose) {
      std::cerr << "epoch " << rec.epoch << " loss " << rec.train_loss << " rmse_mm "
                << rec.val.rmse_mm << "\n";
    }
    if (!cfg.checkpoint_dir.empty()) {
      auto meta = cfg.checkpoint_meta;
      meta["epoch"] = std::to_string(epoch + 1);
      meta["seed"] = std::to_string(cfg.seed);
      save_checkpoint(cfg.checkpoint_dir / ("epoch_" + std::to_string(epoch + 1) + ".chnt"),
                      model, state, meta);
    }
  }
  result.state = std::move(state);
  return result;
}

// ---- checkpoint I/O ----

namespace {

constexpr char kMagic[5] = {'C', 'H', 'N', 'T', '1'};
constexpr std::uint32_t kMaxCount = 1u << 28;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(std::string bytes, fs::path path) : b_(std::move(bytes)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    std::string s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw DataError(path_.string() + ": " + what + " at byte " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail("truncated checkpoint");
  }
  std::string b_;
  std::size_t pos_ = 0;
  fs::path path_;
};

}  // namespace

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(ckpt.header.size()));
  for (const auto& [k, v] : ckpt.header) {
    put_str(out, k);
    put_str(out, v);
  }
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    put_str(out, name);
    const Shape& s = t.shape();
    put_u32(out, 4);
    for (int d : {s.n, s.c, s.h, s.w}) put_u32(out, static_cast<std::uint32_t>(d));
    for (Real v : t.vec()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  // write-then-rename so an interrupted save never leaves a torn file
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  Reader r({std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()}, path);
  if (r.raw(sizeof kMagic) != std::string(kMagic, sizeof kMagic)) {
    throw DataError(path.string() + ": bad magic (expected CHNT1) at byte 0");
  }
  Checkpoint c;
  const std::uint32_t entries = r.u32();
  if (entries > kMaxCount) r.fail("implausible header size");
  for (std::uint32_t i = 0; i < entries; ++i) {
    std::string k = r.str();
    c.header[k] = r.str();
  }
  const std::uint32_t count = r.u32();
  if (count > kMaxCount) r.fail("implausible tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t ndim = r.u32();
    if (ndim == 0 || ndim > 4) r.fail("unsupported rank " + std::to_string(ndim));
    int dims[4] = {1, 1, 1, 1};
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const std::uint32_t v = r.u32();
      if (v > kMaxCount) r.fail("implausible dimension");
      dims[4 - ndim + d] = static_cast<int>(v);
      numel *= v;
    }
    if (numel > kMaxCount) r.fail("implausible tensor size");
    const std::string payload = r.raw(4 * numel);
    Tensor4 t({dims[0], dims[1], dims[2], dims[3]});
    for (std::size_t j = 0; j < numel; ++j) {
      std::uint32_t bits = 0;
      for (int k = 0; k < 4; ++k) bits |= std::uint32_t(static_cast<unsigned char>(payload[4 * j + k])) << (8 * k);
      t[j] = static_cast<Real>(std::bit_cast<float>(bits));
    }
    c.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.at_end()) r.fail("trailing data");
  return c;
}

void save_checkpoint(const fs::path& path, const ChNetModel& model, const AdamState& state,
                     const std::map<std::string, std::string>& meta) {
  Checkpoint c;
  c.header = meta;
  for (const auto& [k, v] : model.config().to_kv()) c.header["model." + k] = v;
  c.header["adam.step"] = std::to_string(state.step);
  for (const auto& [name, p] : model.parameters()) c.tensors.emplace("param." + name, p.value());
  for (const auto& [name, s] : model.batchnorm_states()) {
    c.tensors.emplace("bn." + name + ".running_mean", s.running_mean);
    c.tensors.emplace("bn." + name + ".running_var", s.running_var);
  }
  for (const auto& [name, t] : state.m) c.tensors.emplace("adam.m." + name, t);
  for (const auto& [name, t] : state.v) c.tensors.emplace("adam.v." + name, t);
  write_checkpoint(path, c);
}

namespace {

const Tensor4& require(const Checkpoint& c, const std::string& name, const Shape& shape) {
  auto it = c.tensors.find(name);
  if (it == c.tensors.end()) throw DataError("checkpoint lacks tensor " + name);
  if (it->second.shape() != shape) {
    throw DataError("checkpoint tensor " + name + " has shape " + it->second.shape().str() +
                    ", expected " + shape.str());
  }
  return it->second;
}

}  // namespace

ChNetModel restore_model(const Checkpoint& ckpt) {
  std::map<std::string, std::string> kv;
  for (const auto& [k, v] : ckpt.header) {
    if (k.rfind("model.", 0) == 0) kv[k.substr(6)] = v;
  }
  if (kv.empty()) throw DataError("checkpoint has no model configuration");
  ChNetModel model = ChNetModel::build(ChNetConfig::from_kv(kv), 0);
  for (auto& [name, p] : model.parameters()) {
    p.mutable_value() = require(ckpt, "param." + name, p.shape());
  }
  for (auto& [name, s] : model.batchnorm_states()) {
    s.running_mean = require(ckpt, "bn." + name + ".running_mean", s.running_mean.shape());
    s.running_var = require(ckpt, "bn." + name + ".running_var", s.running_var.shape());
  }
  return model;
}

AdamState restore_adam(const Checkpoint& ckpt) {
  AdamState s;
  auto it = ckpt.header.find("adam.step");
  if (it != ckpt.header.end()) {
    try {
      s.step = std::stoll(it->second);
    } catch (const std::exception&) {
      throw DataError("checkpoint has invalid adam.step '" + it->second + "'");
    }
  }
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.rfind("adam.m.", 0) == 0) s.m.emplace(name.substr(7), t);
    if (name.rfind("adam.v.", 0) == 0) s.v.emplace(name.substr(7), t);
  }
  return s;
}

CHNET_NS_END
