#pragma once

#include <functional>
#include <vector>

#include "chnet/autodiff.hpp"

CHNET_NS_BEGIN

inline constexpr double kGradCheckStep = 1e-6;

/// Compares the reverse-mode gradient of a scalar function against central
/// differences. Returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
/// Requires the f64 build.
double grad_check(const std::function<Variable(const Variable&)>& f,
                  const Tensor4& x, double step = kGradCheckStep);

/// Same check for a closure over existing parameters. At most
/// `max_entries` entries per parameter are probed (evenly strided); 0 means
/// all of them.
double grad_check_params(const std::function<Variable()>& f,
                         std::vector<Variable> params,
                         double step = kGradCheckStep,
                         std::size_t max_entries = 0);

CHNET_NS_END
