#include <gtest/gtest.h>

#include <random>

#include "chnet/errors.hpp"
#include "chnet/gradcheck.hpp"
#include "chnet/guidance.hpp"
#include "oracles.hpp"

using namespace chnet;

namespace {

Tensor4 randn(Shape s, std::uint64_t seed, Real stddev = 1) {
  std::mt19937_64 rng(seed);
  return Tensor4::randn(s, rng, stddev);
}

GuidanceParams random_params(const GuidanceConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GuidanceParams p = GuidanceParams::init(cfg, rng);
  // non-zero biases so every parameter is exercised
  for (Variable* b : {&p.b_guide, &p.b_expand, &p.b_out}) {
    b->mutable_value() = Tensor4::randn(b->shape(), rng, 0.5);
  }
  return p;
}

std::vector<double> plane_of(const Tensor4& t, int n, int c) {
  const Real* p = t.plane(n, c);
  return {p, p + t.shape().plane()};
}

}  // namespace

TEST(FastGuidance, ZeroParamsGiveZero) {
  GuidanceConfig cfg{4, 3, Aggregation::mean};
  Variable fi(randn({2, 4, 5, 5}, 1)), fd(randn({2, 4, 5, 5}, 2));
  Variable y = fast_guidance(fi, fd, GuidanceParams::zeros(cfg), cfg);
  for (Real v : y.value().vec()) EXPECT_EQ(v, 0.0);
}

TEST(FastGuidance, IdentityGuidance) {
  const int c = 3;
  GuidanceConfig cfg{c, 1, Aggregation::none};
  GuidanceParams p = GuidanceParams::zeros(cfg);
  p.b_guide.mutable_value().fill(1);
  for (int k = 0; k < c; ++k) {
    p.w_expand.mutable_value().at(k, k, 0, 0) = 1;
    p.w_out.mutable_value().at(k, k, 1, 1) = 1;
  }
  Tensor4 fd = randn({2, c, 4, 6}, 3);
  Variable y = fast_guidance(Variable(randn({2, c, 4, 6}, 4)), Variable(fd), p, cfg);
  EXPECT_EQ(y.value(), fd);
}

TEST(FastGuidance, ScalarOracle) {
  GuidanceConfig cfg{2, 2, Aggregation::mean};
  GuidanceParams p = random_params(cfg, 5);
  const double fi[2] = {0.7, -1.3}, fd[2] = {2.0, -0.4};
  Variable y = fast_guidance(Variable(Tensor4({1, 2, 1, 1}, {fi[0], fi[1]})),
                             Variable(Tensor4({1, 2, 1, 1}, {fd[0], fd[1]})), p, cfg);

  // 1x1 maps: 3x3 convolutions with padding 1 reduce to their centre taps.
  const Tensor4 &wg = p.w_guide.value(), &we = p.w_expand.value(),
                &wo = p.w_out.value();
  double weight[2], expanded[4], out[2], result[2];
  for (int c = 0; c < 2; ++c) {
    weight[c] = p.b_guide.value()[c];
    for (int k = 0; k < 2; ++k) weight[c] += wg.at(c, k, 1, 1) * fi[k];
  }
  for (int e = 0; e < 4; ++e) {
    expanded[e] = p.b_expand.value()[e];
    for (int c = 0; c < 2; ++c) expanded[e] += we.at(e, c, 0, 0) * weight[c];
  }
  const double psi = (expanded[0] + expanded[1] + expanded[2] + expanded[3]) / 4;
  for (int c = 0; c < 2; ++c) {
    out[c] = (fd[c] * expanded[c] + fd[c] * expanded[2 + c]) * psi;
  }
  for (int c = 0; c < 2; ++c) {
    result[c] = p.b_out.value()[c];
    for (int k = 0; k < 2; ++k) result[c] += wo.at(c, k, 1, 1) * out[k];
  }
  EXPECT_NEAR(y.value()[0], result[0], 1e-12);
  EXPECT_NEAR(y.value()[1], result[1], 1e-12);
}

TEST(FastGuidance, SplitMultiplySumIsLinear) {
  Tensor4 fd = randn({2, 4, 5, 5}, 6);
  Variable expanded(randn({2, 12, 5, 5}, 7));
  auto parts = chunk_channels(expanded, 3);
  Variable lhs = mul(Variable(fd), parts[0]);
  Variable gsum = parts[0];
  for (int j = 1; j < 3; ++j) {
    lhs = add(lhs, mul(Variable(fd), parts[j]));
    gsum = add(gsum, parts[j]);
  }
  EXPECT_LT(max_abs_diff(lhs.value(), mul(Variable(fd), gsum).value()), 1e-12);
}

TEST(FastGuidance, Rejections) {
  GuidanceConfig cfg{4, 3, Aggregation::mean};
  GuidanceParams p = GuidanceParams::zeros(cfg);
  EXPECT_THROW(fast_guidance(Variable(Tensor4({1, 4, 5, 5})),
                             Variable(Tensor4({1, 4, 5, 4})), p, cfg),
               ShapeError);
  EXPECT_THROW(fast_guidance(Variable(Tensor4({1, 2, 5, 5})),
                             Variable(Tensor4({1, 2, 5, 5})), p, cfg),
               ShapeError);
  GuidanceConfig other{4, 2, Aggregation::mean};
  EXPECT_THROW(fast_guidance(Variable(Tensor4({1, 4, 5, 5})),
                             Variable(Tensor4({1, 4, 5, 5})), p, other),
               ShapeError);
}

class GuidanceGradients : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(GuidanceGradients, AllInputsAndParameters) {
  const auto seed = GetParam();
  for (Aggregation agg : {Aggregation::mean, Aggregation::max, Aggregation::none}) {
    GuidanceConfig cfg{3, 2, agg};
    GuidanceParams p = random_params(cfg, seed);
    Tensor4 fi = randn({2, 3, 4, 4}, seed + 1), fd = randn({2, 3, 4, 4}, seed + 2);
    Variable r(randn({2, 3, 4, 4}, seed + 3));
    EXPECT_LT(grad_check([&](const Variable& v) {
                return sum(mul(fast_guidance(v, Variable(fd), p, cfg), r));
              }, fi), 1e-4);
    EXPECT_LT(grad_check([&](const Variable& v) {
                return sum(mul(fast_guidance(Variable(fi), v, p, cfg), r));
              }, fd), 1e-4);
    Variable fiv(fi), fdv(fd);
    EXPECT_LT(grad_check_params([&] {
                return sum(mul(fast_guidance(fiv, fdv, p, cfg), r));
              }, p.all()), 1e-4);
  }
}

TEST_P(GuidanceGradients, FusionBaselines) {
  const auto seed = GetParam();
  std::mt19937_64 rng(seed);
  Tensor4 fi = randn({2, 3, 5, 5}, seed + 1), fd = randn({2, 3, 5, 5}, seed + 2);
  Variable r(randn({2, 3, 5, 5}, seed + 3));
  Variable wp(randn({3, 6, 1, 1}, seed + 4), true), bp(randn({1, 3, 1, 1}, seed + 5), true);
  EXPECT_LT(grad_check([&](const Variable& v) {
              return sum(mul(fuse_concat(v, Variable(fd), wp, bp), r));
            }, fi), 1e-4);
  GuidedFilterFusionParams gp = GuidedFilterFusionParams::init(3, rng);
  EXPECT_LT(grad_check([&](const Variable& v) {
              return sum(mul(fuse_guided_filter(Variable(fi), v, gp), r));
            }, fd), 1e-4);
  EXPECT_LT(grad_check([&](const Variable& v) {
              return sum(mul(fuse_guided_filter(v, Variable(fd), gp), r));
            }, fi), 1e-4);
  Variable fiv(fi), fdv(fd);
  EXPECT_LT(grad_check_params([&] {
              return sum(mul(fuse_guided_filter(fiv, fdv, gp), r));
            }, gp.all()), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GuidanceGradients, ::testing::Values(1u, 2u, 3u));

TEST(GuidedFilter, MatchesDoubleSumOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor4 img = randn({1, 1, 8, 8}, 100 + seed), g = randn({1, 1, 8, 8}, 200 + seed);
    Tensor4 e = classic_guided_filter(img, g, 3, 0.01);
    auto expected = oracle::guided_filter_double_sum(plane_of(img, 0, 0),
                                                     plane_of(g, 0, 0), 8, 8, 3, 0.01);
    for (int i = 0; i < 64; ++i) EXPECT_NEAR(e[i], expected[i], 1e-10);
  }
}

TEST(GuidedFilter, ConstantGuidanceIsMeanOfBoxMeans) {
  const int h = 9, w = 10, n = 3;
  Tensor4 img = randn({1, 1, h, w}, 7);
  Tensor4 e = classic_guided_filter(img, Tensor4::full({1, 1, h, w}, 2.5), n, 1e-3);
  // interior: every n x n window containing p lies inside the image
  for (int py = n - 1; py <= h - n; ++py) {
    for (int px = n - 1; px <= w - n; ++px) {
      double acc = 0;
      for (int ky = py - n + 1; ky <= py; ++ky)
        for (int kx = px - n + 1; kx <= px; ++kx) {
          double box = 0;
          for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) box += img.at(0, 0, ky + i, kx + j);
          acc += box / (n * n);
        }
      EXPECT_NEAR(e.at(0, 0, py, px), acc / (n * n), 1e-10);
    }
  }
}

TEST(GuidedFilter, PreservesConstants) {
  Tensor4 c = Tensor4::full({1, 2, 7, 7}, 4.25);
  Tensor4 e = classic_guided_filter(c, c, 3, 0.1);
  for (int ch = 0; ch < 2; ++ch)
    for (int y = 2; y <= 4; ++y)
      for (int x = 2; x <= 4; ++x) EXPECT_NEAR(e.at(0, ch, y, x), 4.25, 1e-12);
}

TEST(GuidedFilter, RejectsOversizedWindow) {
  Tensor4 t({1, 1, 4, 4});
  EXPECT_THROW(classic_guided_filter(t, t, 5, 0.1), ShapeError);
  EXPECT_THROW(classic_guided_filter(t, Tensor4({1, 1, 4, 5}), 3, 0.1), ShapeError);
}

TEST(FusionBaselines, SumProperties) {
  Tensor4 x = randn({2, 3, 4, 4}, 8), y = randn({2, 3, 4, 4}, 9);
  EXPECT_EQ(fuse_sum(Variable(x), Variable(Tensor4(x.shape()))).value(), x);
  EXPECT_EQ(fuse_sum(Variable(x), Variable(y)).value(),
            fuse_sum(Variable(y), Variable(x)).value());
  EXPECT_THROW(fuse_sum(Variable(x), Variable(Tensor4({2, 3, 4, 5}))), ShapeError);
}

TEST(FusionBaselines, ConcatSelectsFirstHalf) {
  const int c = 3;
  Tensor4 fi = randn({2, c, 4, 4}, 10), fd = randn({2, c, 4, 4}, 11);
  Tensor4 w({c, 2 * c, 1, 1});
  for (int k = 0; k < c; ++k) w.at(k, k, 0, 0) = 1;
  Variable y = fuse_concat(Variable(fi), Variable(fd), Variable(w),
                           Variable(Tensor4({1, c, 1, 1})));
  EXPECT_EQ(y.value(), fi);
}

TEST(Complexity, FastGuidanceAtReferenceShape) {
  GuidanceConfig cfg{128, 3, Aggregation::mean};
  auto r = fast_guidance_complexity(cfg, {2, 128, 80, 304});
  EXPECT_EQ(r.params, 9 * 128 * 128 + 128 + 3 * 128 * 128 + 3 * 128 + 9 * 128 * 128 + 128);
  EXPECT_EQ(r.params, 344704);
  const std::int64_t positions = 2 * 80 * 304;
  EXPECT_EQ(r.conv_macs, (9 + 3 + 9) * 128LL * 128 * positions);
  EXPECT_GE(r.total_macs(), 15'900'000'000LL);
  EXPECT_LE(r.total_macs(), 19'400'000'000LL);
}

TEST(Complexity, MatchesExecutedConvolutionMacs) {
  GuidanceConfig cfg{4, 3, Aggregation::mean};
  GuidanceParams p = random_params(cfg, 12);
  kernels::reset_conv_mac_counter();
  fast_guidance(Variable(randn({2, 4, 6, 5}, 1)), Variable(randn({2, 4, 6, 5}, 2)), p, cfg);
  EXPECT_EQ(static_cast<std::int64_t>(kernels::conv_mac_counter()),
            fast_guidance_complexity(cfg, {2, 4, 6, 5}).conv_macs);
}
