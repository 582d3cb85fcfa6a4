#include "chnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

namespace {

Real scalar_of(const Variable& v) {
  if (v.value().size() != 1) {
    throw ShapeError("grad_check: function output must be scalar, got " +
                     v.shape().str());
  }
  return v.value()[0];
}

void require_f64() {
  if (!kDoublePrecision) {
    throw ShapeError("grad_check requires the 64-bit build");
  }
}

}  // namespace

double grad_check(const std::function<Variable(const Variable&)>& f,
                  const Tensor4& x, double step) {
  require_f64();
  Variable input(x, true);
  Variable out = f(input);
  scalar_of(out);
  Tensor4 analytic(x.shape());
  if (out.requires_grad()) {
    out.backward();
    analytic = input.grad();
  }

  double worst = 0.0;
  Tensor4 probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const Real orig = probe[i];
    probe[i] = orig + static_cast<Real>(step);
    const double plus = scalar_of(f(Variable(probe, false)));
    probe[i] = orig - static_cast<Real>(step);
    const double minus = scalar_of(f(Variable(probe, false)));
    probe[i] = orig;
    const double numeric = (plus - minus) / (2 * step);
    const double err = std::abs(analytic[i] - numeric) /
                       std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check_params(const std::function<Variable()>& f,
                         std::vector<Variable> params, double step,
                         std::size_t max_entries) {
  require_f64();
  for (auto& p : params) p.zero_grad();
  Variable out = f();
  scalar_of(out);
  if (out.requires_grad()) out.backward();

  std::vector<Tensor4> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    analytic.push_back(p.requires_grad() ? p.grad() : Tensor4(p.shape()));
  }

  double worst = 0.0;
  NoGradGuard guard;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor4& value = params[k].mutable_value();
    const std::size_t count = value.size();
    std::size_t stride = 1;
    if (max_entries > 0 && count > max_entries) {
      stride = (count + max_entries - 1) / max_entries;
    }
    for (std::size_t i = 0; i < count; i += stride) {
      const Real orig = value[i];
      value[i] = orig + static_cast<Real>(step);
      const double plus = scalar_of(f());
      value[i] = orig - static_cast<Real>(step);
      const double minus = scalar_of(f());
      value[i] = orig;
      const double numeric = (plus - minus) / (2 * step);
      const double err = std::abs(analytic[k][i] - numeric) /
                         std::max(1.0, std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

CHNET_NS_END
