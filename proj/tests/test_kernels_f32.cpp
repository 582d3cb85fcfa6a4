#include <gtest/gtest.h>

#include <random>

#include "chnet/kernels.hpp"

using namespace chnet;

TEST(ConvKernelsF32, DirectAndPatchPathsAgree) {
  static_assert(sizeof(Real) == 4);
  std::mt19937_64 rng(5);
  const ConvSpec specs[] = {{8, 16, 3, 3, 1, 1, true},
                            {3, 8, 5, 5, 2, 2, true},
                            {16, 48, 1, 1, 1, 0, true}};
  for (const auto& spec : specs) {
    Tensor4 x = Tensor4::randn({2, spec.in_channels, 17, 13}, rng);
    Tensor4 w = Tensor4::randn(
        {spec.out_channels, spec.in_channels, spec.kh, spec.kw}, rng, 0.2f);
    Tensor4 b = Tensor4::randn({1, spec.out_channels, 1, 1}, rng);
    EXPECT_LT(max_abs_diff(kernels::conv2d_direct(x, w, &b, spec),
                           kernels::conv2d_im2col(x, w, &b, spec)),
              1e-5);
  }
}

TEST(ConvKernelsF32, MacCounter) {
  kernels::reset_conv_mac_counter();
  ConvSpec spec{2, 2, 1, 1, 1, 0, true};
  Tensor4 x({1, 2, 4, 4}), w({2, 2, 1, 1}), b({1, 2, 1, 1});
  kernels::conv2d_im2col(x, w, &b, spec);
  EXPECT_EQ(kernels::conv_mac_counter(), 64u);
}
