#include "chnet/data.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::string& header,
                 const std::vector<unsigned char>& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << header;
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

struct Header {
  int width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

// Netpbm binary header: magic, then width/height/maxval separated by
// whitespace or comments, then exactly one whitespace byte.
Header parse_header(const std::vector<unsigned char>& b, const char* magic,
                    const fs::path& path) {
  auto fail = [&](std::size_t pos, const std::string& what) {
    throw DataError(path.string() + ": " + what + " at byte " + std::to_string(pos));
  };
  if (b.size() < 2 || b[0] != magic[0] || b[1] != magic[1]) {
    fail(0, std::string("expected magic ") + magic);
  }
  std::size_t pos = 2;
  auto field = [&](const char* name) {
    for (;;) {
      while (pos < b.size() && std::isspace(b[pos])) ++pos;
      if (pos < b.size() && b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    long long v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos] - '0');
      if (v > 1'000'000) fail(start, std::string(name) + " too large");
      ++pos;
    }
    if (pos == start) fail(start, std::string("missing ") + name);
    return static_cast<int>(v);
  };
  Header h;
  h.width = field("width");
  h.height = field("height");
  h.maxval = field("maxval");
  if (pos >= b.size() || !std::isspace(b[pos])) fail(pos, "missing separator after maxval");
  h.data_offset = pos + 1;
  if (h.width <= 0 || h.height <= 0) fail(2, "non-positive dimensions");
  return h;
}

std::string header_text(const char* magic, int w, int h, int maxval) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n" +
         std::to_string(maxval) + "\n";
}

}  // namespace

Tensor4 load_depth_pgm(const fs::path& path) {
  const auto b = read_bytes(path);
  const Header h = parse_header(b, "P5", path);
  if (h.maxval != 65535) {
    throw DataError(path.string() + ": maxval " + std::to_string(h.maxval) +
                    " (expected 65535) before byte " + std::to_string(h.data_offset));
  }
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (b.size() - h.data_offset < 2 * n) {
    throw DataError(path.string() + ": truncated payload at byte " +
                    std::to_string(b.size()));
  }
  Tensor4 out({1, 1, h.height, h.width});
  const unsigned char* p = b.data() + h.data_offset;
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned raw = (unsigned(p[2 * i]) << 8) | p[2 * i + 1];
    out[i] = static_cast<Real>(raw / kDepthScale);
  }
  return out;
}

void save_depth_pgm(const Tensor4& depth, const fs::path& path) {
  const Shape& s = depth.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("save_depth_pgm: expected (1,1,h,w), got " + s.str());
  std::vector<unsigned char> payload(2 * depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    double raw = std::round(static_cast<double>(depth[i]) * kDepthScale);
    if (!(raw >= 0)) raw = 0;  // also maps NaN to invalid
    const auto v = static_cast<unsigned>(std::min(raw, 65535.0));
    payload[2 * i] = static_cast<unsigned char>(v >> 8);
    payload[2 * i + 1] = static_cast<unsigned char>(v & 0xff);
  }
  write_bytes(path, header_text("P5", s.w, s.h, 65535), payload);
}

Tensor4 load_rgb_ppm(const fs::path& path) {
  const auto b = read_bytes(path);
  const Header h = parse_header(b, "P6", path);
  if (h.maxval != 255) {
    throw DataError(path.string() + ": maxval " + std::to_string(h.maxval) +
                    " (expected 255) before byte " + std::to_string(h.data_offset));
  }
  const std::size_t plane = static_cast<std::size_t>(h.width) * h.height;
  if (b.size() - h.data_offset < 3 * plane) {
    throw DataError(path.string() + ": truncated payload at byte " +
                    std::to_string(b.size()));
  }
  Tensor4 out({1, 3, h.height, h.width});
  const unsigned char* p = b.data() + h.data_offset;
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) out[c * plane + i] = static_cast<Real>(p[3 * i + c] / 255.0);
  }
  return out;
}

void save_rgb_ppm(const Tensor4& rgb, const fs::path& path) {
  const Shape& s = rgb.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("save_rgb_ppm: expected (1,3,h,w), got " + s.str());
  const std::size_t plane = s.plane();
  std::vector<unsigned char> payload(3 * plane);
  for (std::size_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::round(static_cast<double>(rgb[c * plane + i]) * 255.0);
      payload[3 * i + c] = static_cast<unsigned char>(std::clamp(v, 0.0, 255.0));
    }
  }
  write_bytes(path, header_text("P6", s.w, s.h, 255), payload);
}

Tensor4 random_sample_sparse(const Tensor4& gt, int count, std::uint64_t seed) {
  if (count < 0) throw ShapeError("random_sample_sparse: negative sample count");
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] > 0) valid.push_back(i);
  }
  if (valid.size() < static_cast<std::size_t>(count)) {
    throw DataError("random_sample_sparse: " + std::to_string(count) + " samples requested, " +
                    std::to_string(valid.size()) + " valid pixels");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> picked;
  std::sample(valid.begin(), valid.end(), std::back_inserter(picked), count, rng);
  Tensor4 out(gt.shape());
  for (std::size_t i : picked) out[i] = gt[i];
  return out;
}

Tensor4 density_subsample(const Tensor4& sparse, double ratio, std::uint64_t seed) {
  if (!(ratio > 0 && ratio <= 1)) {
    throw ShapeError("density_subsample: ratio must lie in (0, 1], got " + std::to_string(ratio));
  }
  if (ratio == 1) return sparse;
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep(ratio);
  Tensor4 out = sparse;
  for (auto& v : out.vec()) {
    if (v > 0 && !keep(rng)) v = 0;
  }
  return out;
}

SparsePattern parse_sparse_pattern(const std::string& s) {
  if (s == "random") return SparsePattern::random;
  if (s == "scanline") return SparsePattern::scanline;
  throw ConfigError("unknown sparse pattern '" + s + "'");
}

std::string to_string(SparsePattern p) {
  return p == SparsePattern::random ? "random" : "scanline";
}

void SceneSpec::validate() const {
  if (height < 4 || width < 4) throw ConfigError("scene size must be at least 4x4");
  if (num_objects < 0) throw ConfigError("num_objects must be >= 0");
  if (!(min_depth > 0) || !(max_depth > min_depth) || max_depth > kMaxEncodableDepth) {
    throw ConfigError("depth range must satisfy 0 < min < max <= 255.99");
  }
  if (num_samples < 0 || num_samples > height * width) {
    throw ConfigError("num_samples out of range");
  }
  if (scanline_stride < 1) throw ConfigError("scanline_stride must be >= 1");
  if (noise < 0) throw ConfigError("noise must be >= 0");
}

DepthFrame generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int h = spec.height, w = spec.width;
  const double lo = spec.min_depth, hi = spec.max_depth;
  auto quantize = [](double d) { return std::round(d * kDepthScale) / kDepthScale; };

  DepthFrame f;
  f.id = "scene" + std::to_string(spec.seed);
  f.gt = Tensor4({1, 1, h, w});
  f.rgb = Tensor4({1, 3, h, w});
  f.labels.assign(static_cast<std::size_t>(h) * w, 0);

  // Ground plane recedes from the middle of the range at the bottom row to
  // the far limit at the top row.
  const double near_plane = lo + 0.5 * (hi - lo);
  for (int y = 0; y < h; ++y) {
    const double t = static_cast<double>(y) / (h - 1);
    const double d = quantize(hi - t * (hi - near_plane));
    for (int x = 0; x < w; ++x) f.gt.at(0, 0, y, x) = static_cast<Real>(d);
  }

  struct Box {
    int y0, x0, y1, x1;
    double depth;
  };
  std::vector<Box> boxes;
  for (int k = 0; k < spec.num_objects; ++k) {
    const int bh = std::max(2, static_cast<int>(h * (0.15 + 0.35 * unit(rng))));
    const int bw = std::max(2, static_cast<int>(w * (0.15 + 0.35 * unit(rng))));
    const int y0 = static_cast<int>(unit(rng) * (h - bh + 1));
    const int x0 = static_cast<int>(unit(rng) * (w - bw + 1));
    const double d = quantize(lo + unit(rng) * 0.8 * (hi - lo));
    boxes.push_back({y0, x0, std::min(h, y0 + bh), std::min(w, x0 + bw), d});
  }
  // farthest first, so nearer boxes overwrite them
  std::vector<int> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return boxes[a].depth > boxes[b].depth; });
  for (int k : order) {
    const Box& b = boxes[k];
    for (int y = b.y0; y < b.y1; ++y) {
      for (int x = b.x0; x < b.x1; ++x) {
        f.gt.at(0, 0, y, x) = static_cast<Real>(b.depth);
        f.labels[static_cast<std::size_t>(y) * w + x] = k + 1;
      }
    }
  }

  std::vector<std::array<double, 3>> base(spec.num_objects + 1);
  for (auto& c : base) {
    for (auto& v : c) v = 0.2 + 0.8 * unit(rng);
  }
  std::normal_distribution<double> noise(0.0, spec.noise);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto id = static_cast<std::size_t>(f.labels[static_cast<std::size_t>(y) * w + x]);
      const double shade = 1.0 - 0.6 * (f.gt.at(0, 0, y, x) - lo) / (hi - lo);
      for (int c = 0; c < 3; ++c) {
        const double v = base[id][c] * shade + (spec.noise > 0 ? noise(rng) : 0.0);
        f.rgb.at(0, c, y, x) = static_cast<Real>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  if (spec.pattern == SparsePattern::random) {
    f.sparse = random_sample_sparse(f.gt, spec.num_samples, spec.seed ^ 0x5eedULL);
  } else {
    f.sparse = Tensor4(f.gt.shape());
    const int phase = static_cast<int>(unit(rng) * spec.scanline_stride);
    for (int y = phase; y < h; y += spec.scanline_stride) {
      for (int x = 0; x < w; ++x) f.sparse.at(0, 0, y, x) = f.gt.at(0, 0, y, x);
    }
  }
  return f;
}

std::vector<DepthFrame> synthetic_frames(const SceneSpec& base, int count) {
  std::vector<DepthFrame> frames;
  frames.reserve(count);
  for (int i = 0; i < count; ++i) {
    SceneSpec s = base;
    s.seed = base.seed * 1'000'003ULL + static_cast<std::uint64_t>(i);
    DepthFrame f = generate_scene(s);
    char id[32];
    std::snprintf(id, sizeof id, "%06d", i);
    f.id = id;
    frames.push_back(std::move(f));
  }
  return frames;
}

void save_split(const std::vector<DepthFrame>& frames, const fs::path& root,
                const std::string& split) {
  const fs::path dir = root / split;
  fs::create_directories(dir);
  std::ofstream index(dir / "index.txt");
  if (!index) throw DataError("cannot write " + (dir / "index.txt").string());
  for (const auto& f : frames) {
    save_rgb_ppm(f.rgb, dir / (f.id + ".rgb.ppm"));
    save_depth_pgm(f.sparse, dir / (f.id + ".sparse.pgm"));
    save_depth_pgm(f.gt, dir / (f.id + ".gt.pgm"));
    index << f.id << "\n";
  }
}

std::vector<DepthFrame> load_split(const fs::path& root, const std::string& split) {
  const fs::path dir = root / split;
  std::ifstream index(dir / "index.txt");
  if (!index) throw DataError("missing manifest " + (dir / "index.txt").string());
  std::vector<DepthFrame> frames;
  std::string id;
  while (std::getline(index, id)) {
    if (!id.empty() && id.back() == '\r') id.pop_back();
    if (id.empty()) continue;
    DepthFrame f;
    f.id = id;
    f.rgb = load_rgb_ppm(dir / (id + ".rgb.ppm"));
    f.sparse = load_depth_pgm(dir / (id + ".sparse.pgm"));
    f.gt = load_depth_pgm(dir / (id + ".gt.pgm"));
    const Shape& s = f.rgb.shape();
    if (f.sparse.shape() != Shape{1, 1, s.h, s.w} || f.gt.shape() != f.sparse.shape()) {
      throw DataError("frame " + id + ": rgb/sparse/gt sizes disagree");
    }
    frames.push_back(std::move(f));
  }
  if (frames.empty()) throw DataError("split " + dir.string() + " is empty");
  return frames;
}

Batch make_batch(const std::vector<DepthFrame>& frames,
                 const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("make_batch: no indices");
  const Shape s = frames.at(indices[0]).gt.shape();
  const int n = static_cast<int>(indices.size());
  Batch b{Tensor4({n, 3, s.h, s.w}), Tensor4({n, 1, s.h, s.w}), Tensor4({n, 1, s.h, s.w}), {}};
  const std::size_t plane = s.plane();
  for (int i = 0; i < n; ++i) {
    const DepthFrame& f = frames.at(indices[i]);
    if (f.gt.shape() != s) throw ShapeError("make_batch: frame " + f.id + " has a different size");
    std::copy(f.rgb.vec().begin(), f.rgb.vec().end(), b.rgb.data() + i * 3 * plane);
    std::copy(f.sparse.vec().begin(), f.sparse.vec().end(), b.sparse.data() + i * plane);
    std::copy(f.gt.vec().begin(), f.gt.vec().end(), b.gt.data() + i * plane);
    b.ids.push_back(f.id);
  }
  return b;
}

CHNET_NS_END
