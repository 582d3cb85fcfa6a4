#pragma once

#include <string>

#include "chnet/autodiff.hpp"

CHNET_NS_BEGIN

/// Binary map of observed positions: 1 where the sparse input is > 0.
Tensor4 validity_mask(const Tensor4& sparse);

struct Composition {
  Variable observed;    // P1 * M
  Variable unobserved;  // P2 * (1 - M)
  Variable merged;      // P1 where M = 1, else P2
};

/// Masks the two head outputs and merges them into the dense prediction.
/// Gradients reach P1 only at observed and P2 only at unobserved positions.
/// Throws ShapeError for shape mismatch or a non-binary mask.
Composition decoupled_compose(const Variable& p1, const Variable& p2,
                              const Tensor4& mask);

/// Mean squared error over pixels with gt > 0. Throws DataError when no
/// ground-truth pixel is valid.
Variable masked_l2_loss(const Variable& pred, const Tensor4& gt);

struct MetricsRecord {
  double rmse_mm = 0;
  double mae_mm = 0;
  double irmse_per_km = 0;
  double imae_per_km = 0;
  double rel = 0;
  double delta1 = 0;
  double delta2 = 0;
  double delta3 = 0;
  long long valid_count = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

inline constexpr double kMinInverseDepth = 1e-3;

/// Depth metrics over gt > 0. Inputs are meters; RMSE/MAE are reported in
/// millimeters and the inverse-depth errors in 1/km. Predictions are clamped
/// to >= 1e-3 m for the inverse and ratio metrics. `region`, when given,
/// further restricts evaluation to positions where it is nonzero.
MetricsRecord compute_metrics(const Tensor4& pred, const Tensor4& gt,
                              const Tensor4* region = nullptr);

/// Accumulates metric sums over several batches.
class MetricsAccumulator {
 public:
  void add(const Tensor4& pred, const Tensor4& gt, const Tensor4* region = nullptr);
  bool empty() const { return count_ == 0; }
  MetricsRecord result() const;

 private:
  double sq_ = 0, abs_ = 0, isq_ = 0, iabs_ = 0, rel_ = 0;
  long long d1_ = 0, d2_ = 0, d3_ = 0, count_ = 0;
};

CHNET_NS_END
