#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "chnet/tensor.hpp"

CHNET_NS_BEGIN

/// One aligned sample. Tensors have batch size 1; depths are meters and 0
/// marks a missing measurement.
struct DepthFrame {
  Tensor4 rgb;     // (1, 3, h, w), values in [0, 1]
  Tensor4 sparse;  // (1, 1, h, w)
  Tensor4 gt;      // (1, 1, h, w)
  std::string id;
  /// Per-pixel object index for synthetic frames (0 = ground plane); empty
  /// for frames read from disk.
  std::vector<int> labels;
};

/// Depth values that survive the 16-bit encoding exactly.
inline constexpr double kDepthScale = 256.0;
inline constexpr double kMaxEncodableDepth = 65535.0 / kDepthScale;

// 16-bit big-endian binary PGM, depth = raw / 256.
Tensor4 load_depth_pgm(const std::filesystem::path& path);
/// Depths are rounded to the nearest 1/256 m and clamped to the encodable range.
void save_depth_pgm(const Tensor4& depth, const std::filesystem::path& path);
// 8-bit binary PPM, values = raw / 255.
Tensor4 load_rgb_ppm(const std::filesystem::path& path);
void save_rgb_ppm(const Tensor4& rgb, const std::filesystem::path& path);

/// Uniform sample of `count` valid gt pixels without replacement; all other
/// pixels are 0. Throws DataError when gt has fewer valid pixels.
Tensor4 random_sample_sparse(const Tensor4& gt, int count, std::uint64_t seed);
/// Keeps every valid pixel independently with probability `ratio`.
Tensor4 density_subsample(const Tensor4& sparse, double ratio, std::uint64_t seed);

enum class SparsePattern { random, scanline };
SparsePattern parse_sparse_pattern(const std::string& s);
std::string to_string(SparsePattern p);

struct SceneSpec {
  std::uint64_t seed = 0;
  int height = 64;
  int width = 64;
  int num_objects = 4;
  double min_depth = 1.0;
  double max_depth = 10.0;
  SparsePattern pattern = SparsePattern::random;
  int num_samples = 500;
  int scanline_stride = 4;  // every k-th row for the scanline pattern
  double noise = 0.02;

  void validate() const;
};

/// Procedural scene: a receding ground plane plus axis-aligned boxes at
/// constant depth, nearer boxes drawn over farther ones. Each region has a
/// flat base color shaded by its depth, so color edges line up with depth
/// edges. Depths are quantized to 1/256 m.
DepthFrame generate_scene(const SceneSpec& spec);

/// `count` scenes with seeds derived from `base.seed` and the frame index.
std::vector<DepthFrame> synthetic_frames(const SceneSpec& base, int count);

// <root>/<split>/<id>.{rgb.ppm,sparse.pgm,gt.pgm} plus <root>/<split>/index.txt
void save_split(const std::vector<DepthFrame>& frames,
                const std::filesystem::path& root, const std::string& split);
std::vector<DepthFrame> load_split(const std::filesystem::path& root,
                                   const std::string& split);

struct Batch {
  Tensor4 rgb, sparse, gt;
  std::vector<std::string> ids;
};

/// Stacks frames[indices[i]] along the batch axis. Frames must share a size.
Batch make_batch(const std::vector<DepthFrame>& frames,
                 const std::vector<std::size_t>& indices);

CHNET_NS_END
