#include "chnet/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
         std::to_string(h) + "," + std::to_string(w) + ")";
}

Tensor4::Tensor4(Shape shape, Real fill) : shape_(shape) {
  if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
    throw ShapeError("negative tensor dimension " + shape.str());
  }
  data_.assign(shape.numel(), fill);
}

Tensor4::Tensor4(Shape shape, std::vector<Real> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape.numel()) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape.str());
  }
}

Tensor4 Tensor4::randn(Shape shape, std::mt19937_64& rng, Real stddev) {
  Tensor4 t(shape);
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : t.data_) v = static_cast<Real>(dist(rng)) * stddev;
  return t;
}

Tensor4 Tensor4::uniform(Shape shape, std::mt19937_64& rng, Real lo, Real hi) {
  Tensor4 t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data_) v = static_cast<Real>(dist(rng));
  return t;
}

void Tensor4::fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor4::add_(const Tensor4& other) {
  if (!(shape_ == other.shape_)) {
    throw ShapeError("add_: shape mismatch " + shape_.str() + " vs " +
                     other.shape_.str());
  }
  Real* a = data_.data();
  const Real* b = other.data_.data();
  const std::size_t count = data_.size();
  for (std::size_t i = 0; i < count; ++i) a[i] += b[i];
}

void Tensor4::axpy_(Real alpha, const Tensor4& other) {
  if (!(shape_ == other.shape_)) {
    throw ShapeError("axpy_: shape mismatch " + shape_.str() + " vs " +
                     other.shape_.str());
  }
  Real* a = data_.data();
  const Real* b = other.data_.data();
  const std::size_t count = data_.size();
  for (std::size_t i = 0; i < count; ++i) a[i] += alpha * b[i];
}

Real Tensor4::sum() const {
  double acc = 0.0;
  for (Real v : data_) acc += v;
  return static_cast<Real>(acc);
}

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](Real v) { return std::isfinite(v); });
}

Tensor4 Tensor4::batch_slice(int begin, int count) const {
  if (begin < 0 || count < 0 || begin + count > shape_.n) {
    throw ShapeError("batch_slice out of range");
  }
  Shape s = shape_;
  s.n = count;
  const std::size_t per = static_cast<std::size_t>(s.c) * s.h * s.w;
  std::vector<Real> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * per),
                        data_.begin() +
                            static_cast<std::ptrdiff_t>((begin + count) * per));
  return Tensor4(s, std::move(out));
}

Real max_abs_diff(const Tensor4& a, const Tensor4& b) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("max_abs_diff: shape mismatch");
  }
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

Real dot(const Tensor4& a, const Tensor4& b) {
  if (a.size() != b.size()) throw ShapeError("dot: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    acc += static_cast<double>(a[i]) * b[i];
  }
  return static_cast<Real>(acc);
}

CHNET_NS_END
