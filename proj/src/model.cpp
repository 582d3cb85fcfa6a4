#include "chnet/model.hpp"

#include <random>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

HeadMode parse_head_mode(const std::string& s) {
  if (s == "coupled") return HeadMode::coupled;
  if (s == "decoupled") return HeadMode::decoupled;
  throw ConfigError("unknown head_mode '" + s + "' (expected coupled|decoupled)");
}

std::string to_string(HeadMode m) {
  return m == HeadMode::coupled ? "coupled" : "decoupled";
}

FusionKind parse_fusion(const std::string& s) {
  if (s == "fast_guidance") return FusionKind::fast_guidance;
  if (s == "sum") return FusionKind::sum;
  if (s == "concat") return FusionKind::concat;
  if (s == "guided_filter") return FusionKind::guided_filter;
  throw ConfigError("unknown fusion '" + s +
                    "' (expected fast_guidance|sum|concat|guided_filter)");
}

std::string to_string(FusionKind f) {
  switch (f) {
    case FusionKind::fast_guidance: return "fast_guidance";
    case FusionKind::sum: return "sum";
    case FusionKind::concat: return "concat";
    case FusionKind::guided_filter: return "guided_filter";
  }
  return "fast_guidance";
}

void ChNetConfig::validate() const {
  if (base_width < 1) throw ConfigError("base_width must be >= 1");
  if (num_stages < 1) throw ConfigError("num_stages must be >= 1");
  if (expansion_ratio < 1) throw ConfigError("expansion_ratio must be >= 1");
  const int factor = 1 << (num_stages + 1);
  if (height < factor || width < factor || height % factor != 0 ||
      width % factor != 0) {
    throw ConfigError("input size " + std::to_string(height) + "x" +
                      std::to_string(width) + " must be divisible by " +
                      std::to_string(factor));
  }
}

std::vector<int> ChNetConfig::encoder_channels() const {
  std::vector<int> ch{base_width};
  for (int s = 1; s <= num_stages; ++s) {
    ch.push_back(s < num_stages ? ch.back() * 2 : ch.back());
  }
  return ch;
}

std::map<std::string, std::string> ChNetConfig::to_kv() const {
  return {{"base_width", std::to_string(base_width)},
          {"num_stages", std::to_string(num_stages)},
          {"expansion_ratio", std::to_string(expansion_ratio)},
          {"head_mode", to_string(head_mode)},
          {"aggregation", to_string(aggregation)},
          {"fusion", to_string(fusion)},
          {"height", std::to_string(height)},
          {"width", std::to_string(width)}};
}

ChNetConfig ChNetConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ChNetConfig cfg;
  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto as_int = [&](const char* key, int& out) {
    if (const auto* v = get(key)) {
      try {
        std::size_t used = 0;
        out = std::stoi(*v, &used);
        if (used != v->size()) throw std::invalid_argument(*v);
      } catch (const std::exception&) {
        throw ConfigError(std::string("invalid integer for ") + key + ": '" +
                          *v + "'");
      }
    }
  };
  as_int("base_width", cfg.base_width);
  as_int("num_stages", cfg.num_stages);
  as_int("expansion_ratio", cfg.expansion_ratio);
  as_int("height", cfg.height);
  as_int("width", cfg.width);
  if (const auto* v = get("head_mode")) cfg.head_mode = parse_head_mode(*v);
  if (const auto* v = get("aggregation")) cfg.aggregation = parse_aggregation(*v);
  if (const auto* v = get("fusion")) cfg.fusion = parse_fusion(*v);
  return cfg;
}

void ComplexityReport::add(LayerComplexity row) {
  params += row.params;
  macs += row.macs;
  layers.push_back(std::move(row));
}

namespace {

// Collects parameter tensors in creation order from a single RNG stream.
class ParamFactory {
 public:
  ParamFactory(std::map<std::string, Variable>& params,
               std::map<std::string, BatchNormState>& bn, std::uint64_t seed)
      : params_(params), bn_(bn), rng_(seed) {}

  ChNetModel::Conv conv(const std::string& name, ConvSpec spec,
                        bool transposed = false) {
    const Shape ws = transposed
                         ? Shape{spec.in_channels, spec.out_channels, spec.kh, spec.kw}
                         : Shape{spec.out_channels, spec.in_channels, spec.kh, spec.kw};
    // fan-in of the equivalent forward convolution
    const int fan_in = transposed ? spec.in_channels * spec.kh * spec.kw /
                                        (spec.stride * spec.stride)
                                  : spec.in_channels * spec.kh * spec.kw;
    insert(name + ".weight", init_conv_weight(ws, std::max(1, fan_in), rng_));
    if (spec.has_bias) {
      insert(name + ".bias", Variable(Tensor4({1, spec.out_channels, 1, 1}), true));
    }
    return {name, spec, transposed};
  }

  ChNetModel::Norm norm(const std::string& name, int channels) {
    insert(name + ".gamma", Variable(Tensor4::full({1, channels, 1, 1}, 1), true));
    insert(name + ".beta", Variable(Tensor4({1, channels, 1, 1}), true));
    bn_.emplace(name, BatchNormState::init(channels));
    return {name, channels};
  }

  void tensor(const std::string& name, Variable v) { insert(name, std::move(v)); }
  std::mt19937_64& rng() { return rng_; }

 private:
  void insert(const std::string& name, Variable v) {
    if (!params_.emplace(name, std::move(v)).second) {
      throw ShapeError("duplicate parameter name " + name);
    }
  }

  std::map<std::string, Variable>& params_;
  std::map<std::string, BatchNormState>& bn_;
  std::mt19937_64 rng_;
};

ChNetModel::ResidualUnit make_unit(ParamFactory& f, const std::string& name,
                                   int cin, int cout, int stride) {
  ChNetModel::ResidualUnit u;
  u.conv1 = f.conv(name + ".conv1", {cin, cout, 3, 3, stride, 1, false});
  u.bn1 = f.norm(name + ".bn1", cout);
  u.conv2 = f.conv(name + ".conv2", {cout, cout, 3, 3, 1, 1, false});
  u.bn2 = f.norm(name + ".bn2", cout);
  if (stride != 1 || cin != cout) {
    u.projection = f.conv(name + ".proj", {cin, cout, 1, 1, stride, 0, true});
  }
  return u;
}

ChNetModel::Encoder make_encoder(ParamFactory& f, const std::string& name,
                                 int in_channels, const std::vector<int>& ch) {
  ChNetModel::Encoder e;
  e.stem = f.conv(name + ".stem", {in_channels, ch[0], 5, 5, 2, 2, false});
  e.stem_bn = f.norm(name + ".stem_bn", ch[0]);
  for (std::size_t s = 1; s < ch.size(); ++s) {
    const std::string stage = name + ".stage" + std::to_string(s);
    e.stages.push_back({make_unit(f, stage + ".unit1", ch[s - 1], ch[s], 2),
                        make_unit(f, stage + ".unit2", ch[s], ch[s], 1)});
  }
  return e;
}

}  // namespace

ChNetModel ChNetModel::build(const ChNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ChNetModel m;
  m.cfg_ = cfg;
  ParamFactory f(m.params_, m.bn_, seed);
  const std::vector<int> ch = cfg.encoder_channels();

  m.topo_.rgb = make_encoder(f, "rgb", 3, ch);
  m.topo_.depth = make_encoder(f, "depth", 1, ch);

  for (int s = 1; s <= cfg.num_stages; ++s) {
    const int c = ch[static_cast<std::size_t>(s)];
    const std::string name = "fuse" + std::to_string(s);
    switch (cfg.fusion) {
      case FusionKind::fast_guidance: {
        GuidanceConfig gc{c, cfg.expansion_ratio, cfg.aggregation};
        GuidanceParams p = GuidanceParams::init(gc, f.rng());
        f.tensor(name + ".w_guide", p.w_guide);
        f.tensor(name + ".b_guide", p.b_guide);
        f.tensor(name + ".w_expand", p.w_expand);
        f.tensor(name + ".b_expand", p.b_expand);
        f.tensor(name + ".w_out", p.w_out);
        f.tensor(name + ".b_out", p.b_out);
        break;
      }
      case FusionKind::concat:
        f.conv(name + ".proj", {2 * c, c, 1, 1, 1, 0, true});
        break;
      case FusionKind::guided_filter: {
        GuidedFilterFusionParams p = GuidedFilterFusionParams::init(c, f.rng());
        f.tensor(name + ".w_guide", p.w_guide);
        f.tensor(name + ".b_guide", p.b_guide);
        f.tensor(name + ".w_out", p.w_out);
        f.tensor(name + ".b_out", p.b_out);
        break;
      }
      case FusionKind::sum:
        break;
    }
    m.topo_.fusions.push_back({name, c});
  }

  // Decoder mirrors the encoder: block i maps level i+1 back to level i.
  for (int level = cfg.num_stages - 1; level >= 0; --level) {
    const int cin = ch[static_cast<std::size_t>(level + 1)];
    const int cout = ch[static_cast<std::size_t>(level)];
    const std::string name = "decoder.up" + std::to_string(level + 1);
    m.topo_.decoder.push_back(
        {f.conv(name + ".deconv", {cin, cout, 2, 2, 2, 0, false}, true),
         f.norm(name + ".bn", cout)});
  }
  m.topo_.decoder.push_back(
      {f.conv("decoder.up0.deconv", {ch[0], ch[0], 2, 2, 2, 0, false}, true),
       f.norm("decoder.up0.bn", ch[0])});

  const std::vector<std::string> heads =
      cfg.head_mode == HeadMode::decoupled
          ? std::vector<std::string>{"head.observed", "head.unobserved"}
          : std::vector<std::string>{"head.shared"};
  for (const auto& name : heads) {
    HeadBranch h;
    h.conv1 = f.conv(name + ".conv1", {ch[0], ch[0], 3, 3, 1, 1, false});
    h.bn = f.norm(name + ".bn", ch[0]);
    h.conv2 = f.conv(name + ".conv2", {ch[0], 1, 3, 3, 1, 1, true});
    m.topo_.heads.push_back(h);
  }
  return m;
}

const Variable& ChNetModel::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ShapeError("unknown parameter " + name);
  return it->second;
}

void ChNetModel::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

Variable ChNetModel::apply(const Conv& c, const Variable& x) const {
  const Variable& w = param(c.name + ".weight");
  const Variable b = c.spec.has_bias ? param(c.name + ".bias") : Variable();
  return c.transposed ? transposed_conv2d(x, w, b, c.spec) : conv2d(x, w, b, c.spec);
}

Variable ChNetModel::apply(const Norm& n, const Variable& x, Mode mode) {
  return batchnorm2d(x, param(n.name + ".gamma"), param(n.name + ".beta"),
                     bn_.at(n.name), mode);
}

Variable ChNetModel::residual(const ResidualUnit& u, const Variable& x,
                              Mode mode) {
  Variable y = relu(apply(u.bn1, apply(u.conv1, x), mode));
  y = apply(u.bn2, apply(u.conv2, y), mode);
  Variable shortcut = u.projection ? apply(*u.projection, x) : x;
  return relu(add(y, shortcut));
}

Variable ChNetModel::fuse(const Fusion& f, const Variable& image,
                          const Variable& depth) {
  const std::string& n = f.name;
  switch (cfg_.fusion) {
    case FusionKind::fast_guidance: {
      GuidanceConfig gc{f.channels, cfg_.expansion_ratio, cfg_.aggregation};
      GuidanceParams p{param(n + ".w_guide"),  param(n + ".b_guide"),
                       param(n + ".w_expand"), param(n + ".b_expand"),
                       param(n + ".w_out"),    param(n + ".b_out")};
      return fast_guidance(image, depth, p, gc);
    }
    case FusionKind::sum:
      return fuse_sum(image, depth);
    case FusionKind::concat:
      return fuse_concat(image, depth, param(n + ".proj.weight"),
                         param(n + ".proj.bias"));
    case FusionKind::guided_filter: {
      GuidedFilterFusionParams p;
      p.w_guide = param(n + ".w_guide");
      p.b_guide = param(n + ".b_guide");
      p.w_out = param(n + ".w_out");
      p.b_out = param(n + ".b_out");
      return fuse_guided_filter(image, depth, p);
    }
  }
  throw ShapeError("unhandled fusion kind");
}

Variable ChNetModel::head(const HeadBranch& h, const Variable& x, Mode mode) {
  return apply(h.conv2, relu(apply(h.bn, apply(h.conv1, x), mode)));
}

Prediction ChNetModel::forward(const Tensor4& rgb, const Tensor4& sparse,
                               Mode mode, FeatureTap* tap) {
  const Shape rs = rgb.shape(), ss = sparse.shape();
  if (rs.c != 3 || ss.c != 1 || rs.n != ss.n || rs.h != ss.h || rs.w != ss.w ||
      rs.h != cfg_.height || rs.w != cfg_.width) {
    throw ShapeError("forward: expected rgb (n,3," + std::to_string(cfg_.height) +
                     "," + std::to_string(cfg_.width) + ") and sparse (n,1,...), got " +
                     rs.str() + " and " + ss.str());
  }
  Variable img = relu(apply(topo_.rgb.stem_bn, apply(topo_.rgb.stem, Variable(rgb)), mode));
  Variable dep =
      relu(apply(topo_.depth.stem_bn, apply(topo_.depth.stem, Variable(sparse)), mode));

  std::vector<Variable> skips{dep};
  for (std::size_t s = 0; s < topo_.fusions.size(); ++s) {
    for (const auto& unit : topo_.rgb.stages[s]) img = residual(unit, img, mode);
    for (const auto& unit : topo_.depth.stages[s]) dep = residual(unit, dep, mode);
    if (tap && s == 0) tap->before_first_fusion = dep.value();
    dep = fuse(topo_.fusions[s], img, dep);
    if (tap && s == 0) tap->after_first_fusion = dep.value();
    skips.push_back(dep);
  }

  Variable x = skips.back();
  for (std::size_t b = 0; b < topo_.decoder.size(); ++b) {
    const auto& blk = topo_.decoder[b];
    x = relu(apply(blk.bn, apply(blk.deconv, x), mode));
    const std::size_t level = skips.size() - 2 - b;
    if (b + 1 < topo_.decoder.size()) x = add(x, skips[level]);
  }

  Prediction out;
  out.observed = head(topo_.heads[0], x, mode);
  if (topo_.heads.size() > 1) out.unobserved = head(topo_.heads[1], x, mode);
  return out;
}

std::int64_t count_params(const ChNetModel& model, std::string_view prefix) {
  std::int64_t total = 0;
  for (const auto& [name, p] : model.parameters()) {
    if (std::string_view(name).substr(0, prefix.size()) == prefix) {
      total += static_cast<std::int64_t>(p.value().size());
    }
  }
  return total;
}

namespace {

class ComplexityWalker {
 public:
  ComplexityWalker(const ChNetModel& model, ComplexityReport& report)
      : model_(model), report_(report) {}

  Shape conv(const ChNetModel::Conv& c, Shape in) {
    const Shape out = c.transposed
                          ? Shape{in.n, c.spec.out_channels, c.spec.tout_h(in.h),
                                  c.spec.tout_w(in.w)}
                          : Shape{in.n, c.spec.out_channels, c.spec.out_h(in.h),
                                  c.spec.out_w(in.w)};
    const Shape positions = c.transposed ? in : out;
    report_.add({c.name, c.transposed ? "deconv" : "conv", c.spec.param_count(),
                 c.spec.weight_count() * positions.n * positions.h * positions.w});
    return out;
  }
  void norm(const ChNetModel::Norm& n, Shape s) {
    report_.add({n.name, "batchnorm", 2LL * n.channels,
                 2 * static_cast<std::int64_t>(s.numel())});
  }
  void elementwise(const std::string& name, Shape s, std::int64_t ops_per_elem = 1) {
    report_.add({name, "elementwise", 0,
                 ops_per_elem * static_cast<std::int64_t>(s.numel())});
  }
  Shape unit(const ChNetModel::ResidualUnit& u, Shape in) {
    Shape s = conv(u.conv1, in);
    norm(u.bn1, s);
    elementwise(u.conv1.name + ".relu", s);
    s = conv(u.conv2, s);
    norm(u.bn2, s);
    if (u.projection) conv(*u.projection, in);
    elementwise(u.conv2.name + ".residual_add_relu", s, 2);
    return s;
  }
  void fusion(const ChNetModel::Fusion& f, Shape s) {
    const ChNetConfig& cfg = model_.config();
    switch (cfg.fusion) {
      case FusionKind::fast_guidance: {
        GuidanceConfig gc{f.channels, cfg.expansion_ratio, cfg.aggregation};
        for (const auto& row : count_macs(gc, s).layers) {
          report_.add({f.name + "." + row.name, row.kind, row.params, row.macs});
        }
        break;
      }
      case FusionKind::sum:
        elementwise(f.name + ".sum", s);
        break;
      case FusionKind::concat:
        conv({f.name + ".proj", {2 * s.c, s.c, 1, 1, 1, 0, true}, false}, s);
        break;
      case FusionKind::guided_filter: {
        const ConvSpec spec{s.c, s.c, 3, 3, 1, 1, true};
        conv({f.name + ".guide", spec, false}, s);
        int win = std::min({3, s.h, s.w});
        if (win % 2 == 0) --win;
        const Shape inner{s.n, s.c, s.h - win + 1, s.w - win + 1};
        const std::int64_t e = static_cast<std::int64_t>(s.numel());
        const std::int64_t eo = static_cast<std::int64_t>(inner.numel());
        report_.add({f.name + ".filter", "elementwise", 0,
                     4 * e + 6LL * win * win * eo + 8 * eo});
        conv({f.name + ".out", spec, false}, s);
        break;
      }
    }
  }

 private:
  const ChNetModel& model_;
  ComplexityReport& report_;
};

}  // namespace

ComplexityReport count_macs(const ChNetModel& model, int batch) {
  const ChNetConfig& cfg = model.config();
  const auto& topo = model.topology();
  ComplexityReport r;
  ComplexityWalker w(model, r);
  Shape rgb{batch, 3, cfg.height, cfg.width};
  Shape dep{batch, 1, cfg.height, cfg.width};

  auto stem = [&](const ChNetModel::Encoder& e, Shape in) {
    Shape s = w.conv(e.stem, in);
    w.norm(e.stem_bn, s);
    w.elementwise(e.stem.name + ".relu", s);
    return s;
  };
  rgb = stem(topo.rgb, rgb);
  dep = stem(topo.depth, dep);
  std::vector<Shape> skips{dep};
  for (std::size_t s = 0; s < topo.fusions.size(); ++s) {
    for (const auto& u : topo.rgb.stages[s]) rgb = w.unit(u, rgb);
    for (const auto& u : topo.depth.stages[s]) dep = w.unit(u, dep);
    w.fusion(topo.fusions[s], dep);
    skips.push_back(dep);
  }
  Shape x = skips.back();
  for (std::size_t b = 0; b < topo.decoder.size(); ++b) {
    x = w.conv(topo.decoder[b].deconv, x);
    w.norm(topo.decoder[b].bn, x);
    w.elementwise(topo.decoder[b].deconv.name + ".relu", x);
    if (b + 1 < topo.decoder.size()) {
      w.elementwise(topo.decoder[b].deconv.name + ".skip_add", x);
    }
  }
  for (const auto& h : topo.heads) {
    Shape s = w.conv(h.conv1, x);
    w.norm(h.bn, s);
    w.elementwise(h.conv1.name + ".relu", s);
    w.conv(h.conv2, s);
  }
  return r;
}

ComplexityReport count_macs(const GuidanceConfig& cfg, const Shape& input) {
  const GuidanceComplexity c = fast_guidance_complexity(cfg, input);
  const std::int64_t positions = static_cast<std::int64_t>(input.n) * input.h * input.w;
  ComplexityReport r;
  const std::pair<const char*, ConvSpec> convs[] = {
      {"guide", cfg.guide_spec()}, {"expand", cfg.expand_spec()}, {"out", cfg.out_spec()}};
  for (const auto& [name, spec] : convs) {
    r.add({name, "conv", spec.param_count(), spec.weight_count() * positions});
  }
  r.add({"guidance_products", "elementwise", 0, c.elementwise_ops});
  return r;
}

CHNET_NS_END
