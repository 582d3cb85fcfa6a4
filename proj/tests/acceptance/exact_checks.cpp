#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>

#include "acceptance.hpp"
#include "chnet/errors.hpp"
#include "chnet/gradsuite.hpp"
#include "chnet/guidance.hpp"
#include "chnet/objective.hpp"
#include "chnet/ops.hpp"
#include "chnet/train.hpp"
#include "oracles.hpp"

using namespace chnet;

namespace acceptance {
namespace {

static_assert(kDoublePrecision, "exact checks need the 64-bit build");

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor4 randn(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor4::randn(s, rng);
}

Tensor4 random_depth(Shape s, std::uint64_t seed, double valid) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(valid);
  std::uniform_real_distribution<double> depth(0.5, 20.0);
  Tensor4 d(s);
  for (auto& v : d.vec()) v = keep(rng) ? depth(rng) : 0.0;
  return d;
}

std::vector<double> plane_of(const Tensor4& t) {
  return {t.data(), t.data() + t.shape().plane()};
}

Outcome gradient_suite() {
  Verdict v(1);
  const auto t0 = std::chrono::steady_clock::now();
  auto rows = run_gradient_suite({1, 2, 3});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double worst_op = 0, worst_model = 0;
  int passed = 0;
  for (const auto& r : rows) {
    passed += r.pass();
    v.require(r.pass(), r.name + " seed " + std::to_string(r.seed) + " error " +
                            fmt("%.2e", r.error));
    double& worst = r.tolerance > kOpGradTolerance ? worst_model : worst_op;
    worst = std::max(worst, r.error);
  }
  v.require(rows.size() > 100, "suite has only " + std::to_string(rows.size()) + " checks");
  v.require(secs < 120, "took " + fmt("%.1f s", secs));
  v.note(std::to_string(passed) + "/" + std::to_string(rows.size()) + " checks");
  v.note("worst op " + fmt("%.1e", worst_op));
  v.note("worst end-to-end " + fmt("%.1e", worst_model));
  v.note(fmt("%.1f s", secs));
  return v.done();
}

Outcome complexity() {
  Verdict v(2);
  auto c = fast_guidance_complexity({128, 3, Aggregation::mean}, {2, 128, 80, 304});
  v.require(c.params == 344704, "params " + std::to_string(c.params));
  v.require(c.params >= 320000 && c.params <= 400000, "params out of band");
  const double g = c.total_macs() / 1e9;
  v.require(g >= 15.9 && g <= 19.4, "MACs " + fmt("%.3f G", g));
  v.note("params " + std::to_string(c.params));
  v.note("MACs " + fmt("%.3f G", g) + " (reference 17.63 G)");
  return v.done();
}

Outcome guided_filter_oracle() {
  Verdict v(3);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::uniform_real_distribution<double> eps_dist(1e-3, 1.0);
    const double eps = eps_dist(rng);
    Tensor4 img = Tensor4::randn({1, 1, 8, 8}, rng), g = Tensor4::randn({1, 1, 8, 8}, rng);
    Tensor4 e = classic_guided_filter(img, g, 3, eps);
    auto ref = oracle::guided_filter_double_sum(plane_of(img), plane_of(g), 8, 8, 3, eps);
    for (int i = 0; i < 64; ++i) worst = std::max(worst, std::abs(e[i] - ref[i]));
  }
  v.require(worst <= 1e-10, "double-sum mismatch " + fmt("%.2e", worst));

  // Constant guidance reduces the filter to the mean of the box means of all
  // windows covering a pixel.
  const int h = 9, w = 10, n = 3;
  Tensor4 img = randn({1, 1, h, w}, 77);
  Tensor4 e = classic_guided_filter(img, Tensor4::full({1, 1, h, w}, 2.5), n, 1e-3);
  double box_worst = 0;
  for (int py = n - 1; py <= h - n; ++py)
    for (int px = n - 1; px <= w - n; ++px) {
      double acc = 0;
      for (int ky = py - n + 1; ky <= py; ++ky)
        for (int kx = px - n + 1; kx <= px; ++kx) {
          double box = 0;
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) box += img.at(0, 0, ky + i, kx + j);
          acc += box / (n * n);
        }
      box_worst = std::max(box_worst, std::abs(e.at(0, 0, py, px) - acc / (n * n)));
    }
  v.require(box_worst <= 1e-12, "box-mean identity off by " + fmt("%.2e", box_worst));
  v.note("max oracle error " + fmt("%.1e", worst));
  v.note("box identity " + fmt("%.1e", box_worst));
  return v.done();
}

Outcome decoupled_head() {
  Verdict v(4);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Shape s{2, 1, 5, 7};
    Tensor4 sparse = random_depth(s, 3 * seed + 2, 0.1 + 0.008 * seed);
    Tensor4 m = validity_mask(sparse);
    Variable p1(randn(s, 3 * seed), true), p2(randn(s, 3 * seed + 1), true);
    Composition c = decoupled_compose(p1, p2, m);
    sum(c.merged).backward();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const bool observed = sparse[i] > 0;
      v.require(m[i] == (observed ? 1 : 0), "mask disagrees with sparse input");
      v.require(c.observed.value()[i] * c.unobserved.value()[i] == 0, "terms overlap");
      v.require(c.observed.value()[i] + c.unobserved.value()[i] == c.merged.value()[i],
                "terms do not sum to the merged map");
      v.require(c.merged.value()[i] == (observed ? p1.value()[i] : p2.value()[i]),
                "merged map picks the wrong head");
      v.require(p2.grad()[i] == 1 - m[i], "dD/dP2 != 1 - M");
      v.require(p1.grad()[i] == m[i], "dD/dP1 != M");
    }
  }
  v.note("100 instances");
  return v.done();
}

Outcome loss_oracle() {
  Verdict v(5);
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Tensor4 gt = random_depth({2, 1, 7, 9}, 500 + seed, 0.05 + 0.015 * seed);
    Tensor4 pred = randn(gt.shape(), 600 + seed);
    double acc = 0;
    long count = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (gt[i] <= 0) continue;
      acc += (pred[i] - gt[i]) * (pred[i] - gt[i]);
      ++count;
    }
    if (count == 0) {
      bool threw = false;
      try {
        masked_l2_loss(Variable(pred), gt);
      } catch (const DataError&) {
        threw = true;
      }
      v.require(threw, "empty valid set accepted");
      continue;
    }
    worst = std::max(worst, std::abs(masked_l2_loss(Variable(pred), gt).value()[0] - acc / count));
  }
  v.require(worst <= 1e-12, "loss mismatch " + fmt("%.2e", worst));
  bool threw = false;
  try {
    masked_l2_loss(Variable(randn({1, 1, 4, 4}, 9)), Tensor4({1, 1, 4, 4}));
  } catch (const DataError&) {
    threw = true;
  }
  v.require(threw, "all-zero ground truth accepted");
  v.note("max error " + fmt("%.1e", worst));
  return v.done();
}

Outcome metrics() {
  Verdict v(6);
  Tensor4 gt = random_depth({2, 1, 6, 6}, 11, 0.5);
  MetricsRecord id = compute_metrics(gt, gt);
  v.require(id.rmse_mm == 0 && id.mae_mm == 0 && id.irmse_per_km == 0 && id.imae_per_km == 0 &&
                id.rel == 0,
            "identity errors not zero");
  v.require(id.delta1 == 1 && id.delta2 == 1 && id.delta3 == 1, "identity deltas not 1");

  MetricsRecord h = compute_metrics(Tensor4({1, 1, 1, 2}, {2, 4}), Tensor4({1, 1, 1, 2}, {1, 2}));
  v.require(std::abs(h.rmse_mm - 1581.14) < 0.005, "hand RMSE " + fmt("%.4f", h.rmse_mm));
  v.require(std::abs(h.mae_mm - 1500) < 1e-9, "hand MAE " + fmt("%.4f", h.mae_mm));
  v.require(std::abs(h.rel - 1.0) < 1e-12, "hand REL " + fmt("%.4f", h.rel));
  v.require(h.delta1 == 0, "hand delta1 " + fmt("%.4f", h.delta1));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor4 g = random_depth({1, 1, 10, 10}, 300 + seed, 0.7);
    Tensor4 p = g;
    std::mt19937_64 rng(400 + seed);
    std::uniform_real_distribution<double> factor(0.6, 1.6);
    for (auto& x : p.vec()) x = (x > 0 ? x : 5.0) * factor(rng);
    const double k = 2.5;
    Tensor4 gk = g, pk = p;
    for (auto& x : gk.vec()) x *= k;
    for (auto& x : pk.vec()) x *= k;
    MetricsRecord a = compute_metrics(p, g), b = compute_metrics(pk, gk);
    auto close = [](double x, double y) { return std::abs(x - y) <= 1e-9 * std::max(1.0, std::abs(y)); };
    v.require(close(b.rmse_mm, k * a.rmse_mm) && close(b.mae_mm, k * a.mae_mm),
              "linear errors do not scale");
    v.require(close(b.irmse_per_km, a.irmse_per_km / k) && close(b.imae_per_km, a.imae_per_km / k),
              "inverse errors do not scale");
    v.require(close(b.rel, a.rel) && b.delta1 == a.delta1 && b.delta2 == a.delta2 &&
                  b.delta3 == a.delta3,
              "scale-free metrics changed");
  }
  v.note("hand case RMSE " + fmt("%.2f mm", h.rmse_mm));
  return v.done();
}

Outcome optimizer() {
  Verdict v(9);
  ScheduleConfig s;
  const std::map<int, double> want{{5, 1e-3}, {12, 5e-4}, {17, 1e-4}, {22, 1e-5}};
  for (const auto& [epoch, lr] : want) {
    const double got = lr_at(epoch, s, 1e-3);
    v.require(std::abs(got - lr) <= 1e-18, "lr at epoch " + std::to_string(epoch) + " is " +
                                                 fmt("%.3g", got));
  }

  AdamConfig cfg;
  double worst = 0;
  std::mt19937_64 rng(21);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 5; ++trial) {
    double theta = gauss(rng), m = 0, vv = 0;
    std::map<std::string, Variable> params{{"w", Variable(Tensor4::scalar(theta), true)}};
    AdamState state;
    for (int t = 1; t <= 100; ++t) {
      const double g = gauss(rng), lr = lr_at(t / 5, s, cfg.lr0);
      params["w"].zero_grad();
      sum(mul(params["w"], Variable(Tensor4::scalar(g)))).backward();  // grad = g
      adam_step(params, state, cfg, lr);

      const double gd = g + cfg.weight_decay * theta;
      m = cfg.beta1 * m + (1 - cfg.beta1) * gd;
      vv = cfg.beta2 * vv + (1 - cfg.beta2) * gd * gd;
      const double mhat = m / (1 - std::pow(cfg.beta1, t));
      const double vhat = vv / (1 - std::pow(cfg.beta2, t));
      theta -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
      worst = std::max(worst, std::abs(params["w"].value()[0] - theta));
    }
  }
  v.require(worst <= 1e-12, "Adam drift " + fmt("%.2e", worst));
  v.note("Adam max drift " + fmt("%.1e", worst));
  return v.done();
}

}  // namespace

std::vector<Outcome> exact_checks() {
  return {gradient_suite(), complexity(), guided_filter_oracle(), decoupled_head(),
          loss_oracle(), metrics(), optimizer()};
}

}  // namespace acceptance
