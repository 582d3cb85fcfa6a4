#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chnet/real.hpp"

CHNET_NS_BEGIN

struct GradCheckRow {
  std::string name;
  std::uint64_t seed = 0;
  double error = 0;
  double tolerance = 0;
  bool pass() const { return error < tolerance; }
};

inline constexpr double kOpGradTolerance = 1e-4;
inline constexpr double kModelGradTolerance = 1e-3;

/// Finite-difference checks of every differentiable operation, the fusion
/// blocks, the objective and a tiny end-to-end model, once per seed.
/// Requires the f64 build.
std::vector<GradCheckRow> run_gradient_suite(const std::vector<std::uint64_t>& seeds,
                                             bool include_model = true);

std::string gradient_suite_csv(const std::vector<GradCheckRow>& rows);

CHNET_NS_END
