#include "chnet/gradsuite.hpp"

#include <cstdio>
#include <functional>
#include <random>

#include "chnet/gradcheck.hpp"
#include "chnet/guidance.hpp"
#include "chnet/model.hpp"
#include "chnet/objective.hpp"
#include "chnet/ops.hpp"

CHNET_NS_BEGIN

namespace {

Tensor4 randn(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor4::randn(s, rng);
}

Tensor4 uniform(Shape s, std::uint64_t seed, Real lo, Real hi) {
  std::mt19937_64 rng(seed);
  return Tensor4::uniform(s, rng, lo, hi);
}

// Random linear functional, so every output entry gets its own weight.
Variable project(const Variable& y, std::uint64_t seed) {
  return sum(mul(y, Variable(randn(y.shape(), seed ^ 0xabcdefULL))));
}

class Suite {
 public:
  Suite(std::uint64_t seed, std::vector<GradCheckRow>& rows) : seed_(seed), rows_(rows) {}

  // d/dx of project(f(x))
  void input(const std::string& name, const Tensor4& x,
             const std::function<Variable(const Variable&)>& f,
             double tol = kOpGradTolerance) {
    rows_.push_back({name, seed_,
                     grad_check([&](const Variable& v) { return project(f(v), seed_); }, x), tol});
  }
  // d/dparams of a scalar closure
  void params(const std::string& name, const std::function<Variable()>& f,
              std::vector<Variable> ps, double tol = kOpGradTolerance,
              std::size_t max_entries = 0) {
    rows_.push_back({name, seed_, grad_check_params(f, std::move(ps), kGradCheckStep, max_entries),
                     tol});
  }
  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::vector<GradCheckRow>& rows_;
};

void op_checks(Suite& s) {
  const std::uint64_t k = s.seed() * 101;
  {
    const ConvSpec spec{2, 3, 3, 3, 2, 1, true};
    Variable w(randn({3, 2, 3, 3}, k + 1), true), b(randn({1, 3, 1, 1}, k + 2), true);
    const Tensor4 x = randn({2, 2, 5, 4}, k + 3);
    s.input("conv2d/x", x, [&](const Variable& v) { return conv2d(v, w, b, spec); });
    const Variable xv(x);
    s.params("conv2d/params", [&] { return project(conv2d(xv, w, b, spec), k); }, {w, b});
  }
  {
    const ConvSpec spec{3, 2, 2, 2, 2, 0, true};
    Variable w(randn({3, 2, 2, 2}, k + 4), true), b(randn({1, 2, 1, 1}, k + 5), true);
    const Tensor4 x = randn({2, 3, 3, 2}, k + 6);
    s.input("transposed_conv2d/x", x,
            [&](const Variable& v) { return transposed_conv2d(v, w, b, spec); });
    const Variable xv(x);
    s.params("transposed_conv2d/params",
             [&] { return project(transposed_conv2d(xv, w, b, spec), k); }, {w, b});
  }
  for (Mode mode : {Mode::train, Mode::eval}) {
    const std::string tag = mode == Mode::train ? "train" : "eval";
    Variable g(randn({1, 2, 1, 1}, k + 7), true), b(randn({1, 2, 1, 1}, k + 8), true);
    BatchNormState st = BatchNormState::init(2);
    st.running_mean = randn({1, 2, 1, 1}, k + 9);
    st.running_var.fill(Real(1.7));
    const Tensor4 x = randn({2, 2, 3, 3}, k + 10);
    s.input("batchnorm2d_" + tag + "/x", x, [&](const Variable& v) {
      BatchNormState tmp = st;
      return batchnorm2d(v, g, b, tmp, mode);
    });
    const Variable xv(x);
    s.params("batchnorm2d_" + tag + "/params", [&] {
      BatchNormState tmp = st;
      return project(batchnorm2d(xv, g, b, tmp, mode), k);
    }, {g, b});
  }
  const Tensor4 x = randn({2, 4, 3, 3}, k + 11);
  const Variable y(randn({2, 4, 3, 3}, k + 12));
  const Variable pos(uniform({2, 4, 3, 3}, k + 13, 0.5, 2));
  const Variable sc(randn({2, 1, 3, 3}, k + 14));
  s.input("relu", x, [](const Variable& v) { return relu(v); });
  s.input("add", x, [&](const Variable& v) { return add(v, y); });
  s.input("sub", x, [&](const Variable& v) { return sub(y, v); });
  s.input("mul", x, [&](const Variable& v) { return mul(v, y); });
  s.input("mul_self", x, [](const Variable& v) { return mul(v, v); });
  s.input("div/numerator", x, [&](const Variable& v) { return div(v, pos); });
  s.input("div/denominator", x,
          [&](const Variable& v) { return div(y, add_scalar(mul(v, v), 1)); });
  s.input("scale", x, [](const Variable& v) { return scale(v, Real(-2.5)); });
  s.input("concat_channels", x, [&](const Variable& v) { return concat_channels({v, y, v}); });
  s.input("chunk_channels", x, [](const Variable& v) { return chunk_channels(v, 2)[1]; });
  s.input("mean_over_channels", x, [](const Variable& v) { return mean_over_channels(v); });
  s.input("max_over_channels", x, [](const Variable& v) { return max_over_channels(v); });
  s.input("broadcast_mul/x", x, [&](const Variable& v) { return broadcast_mul_channelwise(v, sc); });
  s.input("broadcast_mul/s", x, [&](const Variable& v) {
    return broadcast_mul_channelwise(y, mean_over_channels(v));
  });
  s.input("box_mean", x, [](const Variable& v) { return box_mean(v, 2); });
  s.input("box_mean_adjoint", x, [](const Variable& v) { return box_mean_adjoint(v, 2, 4, 4); });
  s.input("mean", x, [](const Variable& v) { return mean(v); });
}

void fusion_checks(Suite& s) {
  const std::uint64_t k = s.seed() * 211;
  const Tensor4 fi = randn({2, 3, 5, 5}, k + 1), fd = randn({2, 3, 5, 5}, k + 2);
  const Tensor4 guide = randn({2, 3, 5, 5}, k + 3);
  s.input("guided_filter/input", fd,
          [&](const Variable& v) { return guided_filter(v, Variable(guide), 3, Real(0.1)); });
  s.input("guided_filter/guide", guide,
          [&](const Variable& v) { return guided_filter(Variable(fd), v, 3, Real(0.1)); });
  for (Aggregation agg : {Aggregation::mean, Aggregation::max, Aggregation::none}) {
    const std::string tag = "fast_guidance_" + to_string(agg);
    const GuidanceConfig cfg{3, 3, agg};
    std::mt19937_64 rng(k + 4);
    GuidanceParams p = GuidanceParams::init(cfg, rng);
    for (const Variable& v : p.all()) v.node().requires_grad = true;
    s.input(tag + "/f_image", fi,
            [&](const Variable& v) { return fast_guidance(v, Variable(fd), p, cfg); });
    s.input(tag + "/f_depth", fd,
            [&](const Variable& v) { return fast_guidance(Variable(fi), v, p, cfg); });
    const Variable a(fi), b(fd);
    s.params(tag + "/params", [&] { return project(fast_guidance(a, b, p, cfg), k); }, p.all());
  }
  {
    Variable w(randn({3, 6, 1, 1}, k + 5), true), b(randn({1, 3, 1, 1}, k + 6), true);
    s.input("fuse_concat/f_image", fi,
            [&](const Variable& v) { return fuse_concat(v, Variable(fd), w, b); });
    const Variable a(fi), d(fd);
    s.params("fuse_concat/params", [&] { return project(fuse_concat(a, d, w, b), k); }, {w, b});
  }
  {
    std::mt19937_64 rng(k + 7);
    GuidedFilterFusionParams p = GuidedFilterFusionParams::init(3, rng);
    for (const Variable& v : p.all()) v.node().requires_grad = true;
    s.input("fuse_guided_filter/f_image", fi,
            [&](const Variable& v) { return fuse_guided_filter(v, Variable(fd), p); });
    const Variable a(fi), d(fd);
    s.params("fuse_guided_filter/params",
             [&] { return project(fuse_guided_filter(a, d, p), k); }, p.all());
  }
  s.input("fuse_sum", fi, [&](const Variable& v) { return fuse_sum(v, Variable(fd)); });
}

void objective_checks(Suite& s) {
  const std::uint64_t k = s.seed() * 307;
  const Shape shape{2, 1, 6, 6};
  Tensor4 sparse = uniform(shape, k + 1, -1, 1);
  for (auto& v : sparse.vec()) v = v > 0.3 ? v + 1 : 0;
  const Tensor4 mask = validity_mask(sparse);
  const Tensor4 p1 = randn(shape, k + 2), p2 = randn(shape, k + 3);
  s.input("decoupled_compose/p1", p1, [&](const Variable& v) {
    return decoupled_compose(v, Variable(p2), mask).merged;
  });
  s.input("decoupled_compose/p2", p2, [&](const Variable& v) {
    return decoupled_compose(Variable(p1), v, mask).merged;
  });
  Tensor4 gt = uniform(shape, k + 4, 0.5, 5);
  gt[0] = 0;
  gt[7] = 0;
  s.input("masked_l2_loss", p1, [&](const Variable& v) { return masked_l2_loss(v, gt); });
}

void model_checks(Suite& s) {
  for (HeadMode head : {HeadMode::decoupled, HeadMode::coupled}) {
    ChNetConfig cfg;
    cfg.base_width = 2;
    cfg.num_stages = 3;
    cfg.height = cfg.width = 16;
    cfg.head_mode = head;
    ChNetModel m = ChNetModel::build(cfg, s.seed());
    std::mt19937_64 rng(s.seed() + 100);
    const Tensor4 rgb = Tensor4::uniform({2, 3, 16, 16}, rng, 0, 1);
    const Tensor4 gt = Tensor4::uniform({2, 1, 16, 16}, rng, 1, 10);
    Tensor4 sparse(gt.shape());
    std::bernoulli_distribution keep(0.3);
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (keep(rng)) sparse[i] = gt[i];
    }
    std::vector<Variable> params;
    for (auto& [name, p] : m.parameters()) params.push_back(p);
    s.params("model_end_to_end_" + to_string(head),
             [&] {
               Prediction p = m.forward(rgb, sparse, Mode::train);
               Variable merged = p.decoupled()
                                     ? decoupled_compose(p.observed, p.unobserved,
                                                         validity_mask(sparse)).merged
                                     : p.observed;
               return masked_l2_loss(merged, gt);
             },
             params, kModelGradTolerance, 6);
  }
}

}  // namespace

std::vector<GradCheckRow> run_gradient_suite(const std::vector<std::uint64_t>& seeds,
                                             bool include_model) {
  std::vector<GradCheckRow> rows;
  for (std::uint64_t seed : seeds) {
    Suite s(seed, rows);
    op_checks(s);
    fusion_checks(s);
    objective_checks(s);
    if (include_model) model_checks(s);
  }
  return rows;
}

std::string gradient_suite_csv(const std::vector<GradCheckRow>& rows) {
  std::string out = "check,seed,max_rel_error,tolerance,pass\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%llu,%.3e,%.0e,%d\n", r.name.c_str(),
                  static_cast<unsigned long long>(r.seed), r.error, r.tolerance, r.pass() ? 1 : 0);
    out += buf;
  }
  return out;
}

CHNET_NS_END
