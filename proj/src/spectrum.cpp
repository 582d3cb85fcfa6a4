#include "chnet/spectrum.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

namespace {

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

PlaneSpectrum plane_spectrum(const Real* plane, int h, int w, int bins) {
  if (h < 1 || w < 1 || bins < 1) throw ShapeError("plane_spectrum: empty plane or no bins");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::unique_ptr<fftw_complex[], FftwFree> buf(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
  if (!buf) throw std::bad_alloc();
  PlaneSpectrum s;
  for (std::size_t i = 0; i < n; ++i) {
    buf[i][0] = static_cast<double>(plane[i]);
    buf[i][1] = 0;
    s.spatial_energy += buf[i][0] * buf[i][0];
  }
  // FFTW_ESTIMATE keeps planning deterministic and cheap
  fftw_plan plan = fftw_plan_dft_2d(h, w, buf.get(), buf.get(), FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_execute(plan);
  fftw_destroy_plan(plan);

  const double r_max = 0.5 * std::sqrt(2.0);
  s.bin_edges.resize(bins + 1);
  for (int b = 0; b <= bins; ++b) s.bin_edges[b] = r_max * b / bins;
  s.histogram.assign(bins, 0.0);
  double low = 0;
  for (int u = 0; u < h; ++u) {
    const double fu = static_cast<double>(std::min(u, h - u)) / h;
    for (int v = 0; v < w; ++v) {
      const double fv = static_cast<double>(std::min(v, w - v)) / w;
      const double r = std::hypot(fu, fv);
      const auto& c = buf[static_cast<std::size_t>(u) * w + v];
      const double power = c[0] * c[0] + c[1] * c[1];
      const int bin = std::min(bins - 1, static_cast<int>(r / r_max * bins));
      s.histogram[bin] += std::sqrt(power);
      s.spectral_energy += power;
      if (r < kLowBandRadius) low += power;
    }
  }
  s.dc_energy = (buf[0][0] * buf[0][0] + buf[0][1] * buf[0][1]) / static_cast<double>(n);
  s.spectral_energy /= static_cast<double>(n);
  low /= static_cast<double>(n);
  s.low_band_fraction = s.spectral_energy > 0 ? low / s.spectral_energy : 0.0;
  return s;
}

std::vector<ChannelSpectrum> compare_spectra(const Tensor4& before, const Tensor4& after,
                                             const std::vector<int>& channels, int bins) {
  if (before.shape() != after.shape()) {
    throw ShapeError("compare_spectra: " + before.shape().str() + " vs " + after.shape().str());
  }
  const Shape& s = before.shape();
  std::vector<ChannelSpectrum> out;
  for (int c : channels) {
    if (c < 0 || c >= s.c) {
      throw ShapeError("compare_spectra: channel " + std::to_string(c) + " out of range for " +
                       s.str());
    }
    out.push_back({c, plane_spectrum(before.plane(0, c), s.h, s.w, bins),
                   plane_spectrum(after.plane(0, c), s.h, s.w, bins)});
  }
  return out;
}

CHNET_NS_END
