#pragma once

#include <vector>

#include "chnet/tensor.hpp"

CHNET_NS_BEGIN

/// Radial frequency below which spectral energy counts as low band, in
/// cycles per sample (the largest radius is 0.5 * sqrt(2)).
inline constexpr double kLowBandRadius = 0.125;

struct PlaneSpectrum {
  std::vector<double> bin_edges;   // radial frequency, bins + 1 entries
  std::vector<double> histogram;   // magnitude-weighted counts per bin
  double spatial_energy = 0;       // sum of x^2
  double spectral_energy = 0;      // sum |X|^2 / (h w)
  double dc_energy = 0;            // |X(0,0)|^2 / (h w)
  double low_band_fraction = 0;    // energy share with radius < kLowBandRadius
};

/// 2-D DFT of one h x w plane, binned by normalized radial frequency.
PlaneSpectrum plane_spectrum(const Real* plane, int h, int w, int bins = 16);

struct ChannelSpectrum {
  int channel = 0;
  PlaneSpectrum before;
  PlaneSpectrum after;
  bool enhanced() const { return after.low_band_fraction > before.low_band_fraction; }
};

/// Spectra of the selected channels of sample 0 in two feature maps of equal
/// shape.
std::vector<ChannelSpectrum> compare_spectra(const Tensor4& before, const Tensor4& after,
                                             const std::vector<int>& channels, int bins = 16);

CHNET_NS_END
