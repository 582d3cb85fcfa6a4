#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "chnet/real.hpp"

CHNET_NS_BEGIN

struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense (n, c, h, w) array stored row-major.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape shape, Real fill = Real(0));
  Tensor4(Shape shape, std::vector<Real> data);

  static Tensor4 zeros(Shape shape) { return Tensor4(shape); }
  static Tensor4 full(Shape shape, Real v) { return Tensor4(shape, v); }
  static Tensor4 scalar(Real v) { return Tensor4({1, 1, 1, 1}, v); }
  /// Standard normal entries scaled by `stddev`.
  static Tensor4 randn(Shape shape, std::mt19937_64& rng, Real stddev = 1);
  static Tensor4 uniform(Shape shape, std::mt19937_64& rng, Real lo, Real hi);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  Real* data() { return data_.data(); }
  const Real* data() const { return data_.data(); }
  std::span<Real> span() { return data_; }
  std::span<const Real> span() const { return data_; }
  std::vector<Real>& vec() { return data_; }
  const std::vector<Real>& vec() const { return data_; }

  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + h) *
               shape_.w + w;
  }
  Real& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  Real at(int n, int c, int h, int w) const {
    return data_[offset(n, c, h, w)];
  }
  Real& operator[](std::size_t i) { return data_[i]; }
  Real operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to the (n, c) plane.
  Real* plane(int n, int c) { return data_.data() + offset(n, c, 0, 0); }
  const Real* plane(int n, int c) const {
    return data_.data() + offset(n, c, 0, 0);
  }

  void fill(Real v);
  /// this += other (same shape required).
  void add_(const Tensor4& other);
  /// this += alpha * other.
  void axpy_(Real alpha, const Tensor4& other);
  Real sum() const;
  bool all_finite() const;
  /// Slice of samples [begin, begin + count) along the batch axis.
  Tensor4 batch_slice(int begin, int count) const;

  bool operator==(const Tensor4& o) const {
    return shape_ == o.shape_ && data_ == o.data_;
  }

 private:
  Shape shape_{};
  std::vector<Real> data_;
};

Real max_abs_diff(const Tensor4& a, const Tensor4& b);
Real dot(const Tensor4& a, const Tensor4& b);

CHNET_NS_END
