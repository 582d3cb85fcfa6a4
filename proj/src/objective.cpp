#include "chnet/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "chnet/errors.hpp"
#include "chnet/ops.hpp"

CHNET_NS_BEGIN

Tensor4 validity_mask(const Tensor4& sparse) {
  Tensor4 m(sparse.shape());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = sparse[i] > 0 ? Real(1) : Real(0);
  return m;
}

Composition decoupled_compose(const Variable& p1, const Variable& p2,
                              const Tensor4& mask) {
  if (!(p1.shape() == p2.shape()) || !(p1.shape() == mask.shape())) {
    throw ShapeError("decoupled_compose: shapes " + p1.shape().str() + ", " +
                     p2.shape().str() + ", mask " + mask.shape().str());
  }
  Tensor4 inverse(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] != 0 && mask[i] != 1) {
      throw ShapeError("decoupled_compose: mask must be binary");
    }
    inverse[i] = 1 - mask[i];
  }
  Composition c;
  c.observed = mul(p1, Variable(mask));
  c.unobserved = mul(p2, Variable(std::move(inverse)));
  c.merged = add(c.observed, c.unobserved);
  return c;
}

Variable masked_l2_loss(const Variable& pred, const Tensor4& gt) {
  if (!(pred.shape() == gt.shape())) {
    throw ShapeError("masked_l2_loss: prediction " + pred.shape().str() +
                     " vs ground truth " + gt.shape().str());
  }
  std::size_t valid = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] > 0) {
      const double d = static_cast<double>(pred.value()[i]) - gt[i];
      acc += d * d;
      ++valid;
    }
  }
  if (valid == 0) {
    throw DataError("masked_l2_loss: ground truth has no valid pixels");
  }
  const double inv = 1.0 / static_cast<double>(valid);
  return Variable::make(
      Tensor4::scalar(static_cast<Real>(acc * inv)), {pred},
      [pred, gt, inv](detail::Node& self) {
        Tensor4& g = pred.node().grad_buffer();
        const Real scale = static_cast<Real>(2.0 * inv) * self.grad[0];
        for (std::size_t i = 0; i < gt.size(); ++i) {
          if (gt[i] > 0) g[i] += scale * (pred.value()[i] - gt[i]);
        }
      });
}

std::string MetricsRecord::csv_header() {
  return "rmse_mm,mae_mm,irmse,imae,rel,d1,d2,d3,valid_count";
}

std::string MetricsRecord::csv_row() const {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.4f,%.4f,%.4f,%.4f,%.6f,%.6f,%.6f,%.6f,%lld",
                rmse_mm, mae_mm, irmse_per_km, imae_per_km, rel, delta1, delta2,
                delta3, valid_count);
  return buf;
}

void MetricsAccumulator::add(const Tensor4& pred, const Tensor4& gt,
                             const Tensor4* region) {
  if (!(pred.shape() == gt.shape()) || (region && !(region->shape() == gt.shape()))) {
    throw ShapeError("compute_metrics: shape mismatch " + pred.shape().str() +
                     " vs " + gt.shape().str());
  }
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const double g = gt[i];
    if (!(g > 0) || (region && (*region)[i] == 0)) continue;
    const double p = pred[i];
    const double pc = std::max(p, kMinInverseDepth);
    const double d = p - g;
    sq_ += d * d;
    abs_ += std::abs(d);
    const double id = 1.0 / pc - 1.0 / g;
    isq_ += id * id;
    iabs_ += std::abs(id);
    rel_ += std::abs(d) / g;
    const double ratio = std::max(pc / g, g / pc);
    d1_ += ratio < 1.25;
    d2_ += ratio < 1.25 * 1.25;
    d3_ += ratio < 1.25 * 1.25 * 1.25;
    ++count_;
  }
}

MetricsRecord MetricsAccumulator::result() const {
  if (count_ == 0) throw DataError("compute_metrics: no valid ground-truth pixels");
  const double n = static_cast<double>(count_);
  MetricsRecord r;
  r.rmse_mm = std::sqrt(sq_ / n) * 1000.0;
  r.mae_mm = abs_ / n * 1000.0;
  // 1/m -> 1/km
  r.irmse_per_km = std::sqrt(isq_ / n) * 1000.0;
  r.imae_per_km = iabs_ / n * 1000.0;
  r.rel = rel_ / n;
  r.delta1 = static_cast<double>(d1_) / n;
  r.delta2 = static_cast<double>(d2_) / n;
  r.delta3 = static_cast<double>(d3_) / n;
  r.valid_count = count_;
  return r;
}

MetricsRecord compute_metrics(const Tensor4& pred, const Tensor4& gt,
                              const Tensor4* region) {
  MetricsAccumulator acc;
  acc.add(pred, gt, region);
  return acc.result();
}

CHNET_NS_END
