#include "mmsam/fusion.hpp"

#include "mmsam/error.hpp"
#include "mmsam/trace.hpp"

namespace mmsam {

std::array<int64_t, 4> FeaturePyramid::channels() const {
  validate();
  return {maps[0].dim(3), maps[1].dim(3), maps[2].dim(3), maps[3].dim(3)};
}

void FeaturePyramid::validate() const {
  if (maps.size() != 4) throw ArgumentError("a feature pyramid has exactly 4 levels");
  for (size_t i = 0; i < 4; ++i) {
    if (maps[i].value().rank() != 4) throw ArgumentError("pyramid levels must be NHWC maps");
    if (i > 0 && (maps[i].dim(1) * 2 != maps[i - 1].dim(1) || maps[i].dim(2) * 2 != maps[i - 1].dim(2)))
      throw ArgumentError("pyramid spatial dims must halve per level");
  }
}

std::string to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::addition: return "addition";
    case FusionKind::concatenation: return "concatenation";
    case FusionKind::road_fusion: return "road_fusion";
    case FusionKind::rgb_only: return "rgb_only";
  }
  return "?";
}

std::string to_string(EncoderMode mode) {
  return mode == EncoderMode::modality_specific ? "modality_specific" : "modality_agnostic";
}

FusionKind parse_fusion_kind(const std::string& text) {
  for (FusionKind k : {FusionKind::addition, FusionKind::concatenation, FusionKind::road_fusion, FusionKind::rgb_only})
    if (to_string(k) == text) return k;
  throw ConfigError("model.fusion.kind",
                    "unknown fusion kind '" + text + "' (addition, concatenation, road_fusion, rgb_only)");
}

EncoderMode parse_encoder_mode(const std::string& text) {
  for (EncoderMode m : {EncoderMode::modality_specific, EncoderMode::modality_agnostic})
    if (to_string(m) == text) return m;
  throw ConfigError("model.fusion.encoder_mode",
                    "unknown encoder mode '" + text + "' (modality_specific, modality_agnostic)");
}

void FusionConfig::validate() const {
  for (size_t i = 0; i < 4; ++i) {
    if (encoder_channels[i] < 1) throw ConfigError("model.fusion.encoder_channels", "must be positive");
    if (encoder_depths[i] < 0) throw ConfigError("model.fusion.encoder_depths", "must be non-negative");
    const int64_t width = kind == FusionKind::road_fusion ? encoder_channels[i] : 0;
    if (width && (attn_heads < 1 || width % attn_heads != 0))
      throw ConfigError("model.fusion.attn_heads", "must divide every encoder channel width");
  }
  if (target_dim < 1) throw ConfigError("model.fusion.target_dim", "must be positive");
}

std::array<int64_t, 4> FusionConfig::fused_channels() const {
  std::array<int64_t, 4> out = encoder_channels;
  if (kind == FusionKind::road_fusion)
    for (auto& c : out) c *= 2;
  return out;
}

ConvNextBlock::ConvNextBlock(Initializer& init, int64_t dim)
    : dwconv(init, dim, dim, 7, 1, 3, dim),
      norm(init, dim),
      pwconv1(init, dim, 4 * dim),
      pwconv2(init, 4 * dim, dim) {
  register_module("dwconv", dwconv);
  register_module("norm", norm);
  register_module("pwconv1", pwconv1);
  register_module("pwconv2", pwconv2);
  register_parameter("gamma", gamma, init.constant({dim}, 1e-6));
}

Var ConvNextBlock::operator()(const Var& x) const {
  const Var h = pwconv2(gelu(pwconv1(norm(dwconv(x)))));
  return add(x, mul(h, gamma));
}

ConvNextStage::ConvNextStage(Initializer& init, int64_t in, int64_t out, int64_t depth, bool stem)
    : down(init, in, out, stem ? 4 : 2, stem ? 4 : 2, 0), stem_(stem) {
  if (stem) {
    register_module("down", down);
    stem_norm = std::make_unique<LayerNorm>(init, out);
    register_module("stem_norm", *stem_norm);
  } else {
    down_norm = std::make_unique<LayerNorm>(init, in);
    register_module("down_norm", *down_norm);
    register_module("down", down);
  }
  for (int64_t i = 0; i < depth; ++i) {
    blocks.push_back(std::make_unique<ConvNextBlock>(init, out));
    register_module("blocks." + std::to_string(i), *blocks.back());
  }
}

Var ConvNextStage::operator()(const Var& x) const {
  Var h = stem_ ? (*stem_norm)(down(x)) : down((*down_norm)(x));
  for (const auto& b : blocks) h = (*b)(h);
  return h;
}

ConvNextEncoder::ConvNextEncoder(Initializer& init, const std::array<int64_t, 4>& channels,
                                 const std::array<int64_t, 4>& depths) {
  for (size_t i = 0; i < 4; ++i) {
    stages.push_back(std::make_unique<ConvNextStage>(init, i == 0 ? 3 : channels[i - 1], channels[i], depths[i], i == 0));
    register_module("stages." + std::to_string(i), *stages.back());
    out_norms.push_back(std::make_unique<LayerNorm>(init, channels[i]));
    register_module("norms." + std::to_string(i), *out_norms.back());
  }
}

FeaturePyramid ConvNextEncoder::operator()(const Var& image) const {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[3] != 3) throw ArgumentError("encoder input must be (B, H, W, 3), got " + to_string(s));
  if (s[1] % 32 != 0 || s[2] % 32 != 0)
    throw ArgumentError("encoder input spatial dims must be multiples of 32, got " + to_string(s));
  FeaturePyramid pyr;
  Var h = image;
  for (size_t i = 0; i < 4; ++i) {
    h = (*stages[i])(h);
    pyr.maps.push_back((*out_norms[i])(h));
  }
  return pyr;
}

Var replicate_channels(const Var& aux) {
  const Shape& s = aux.shape();
  if (s.size() != 4 || (s[3] != 1 && s[3] != 3))
    throw ArgumentError("auxiliary raster must be (B, H, W, 1) or (B, H, W, 3), got " + to_string(s));
  if (s[3] == 3) return aux;
  return concat({aux, aux, aux}, 3);
}

namespace {

void check_levels(const FeaturePyramid& a, const FeaturePyramid& b, bool channels_too, const char* op) {
  a.validate();
  b.validate();
  for (size_t i = 0; i < 4; ++i) {
    const Shape& sa = a.maps[i].shape();
    const Shape& sb = b.maps[i].shape();
    if (sa[0] != sb[0] || sa[1] != sb[1] || sa[2] != sb[2] || (channels_too && sa[3] != sb[3]))
      throw ArgumentError(std::string(op) + ": level " + std::to_string(i + 1) + " shapes " + to_string(sa) +
                          " and " + to_string(sb) + " differ");
  }
}

}  // namespace

FeaturePyramid fuse_add(const FeaturePyramid& rgb, const FeaturePyramid& x) {
  check_levels(rgb, x, true, "fuse_add");
  FeaturePyramid out;
  for (size_t i = 0; i < 4; ++i) out.maps.push_back(add(rgb.maps[i], x.maps[i]));
  return out;
}

FeaturePyramid fuse_concat(const FeaturePyramid& rgb, const FeaturePyramid& x) {
  check_levels(rgb, x, false, "fuse_concat");
  FeaturePyramid out;
  for (size_t i = 0; i < 4; ++i) out.maps.push_back(concat({rgb.maps[i], x.maps[i]}, 3));
  return out;
}

CoordinateAttention::CoordinateAttention(Initializer& init, int64_t channels)
    : reduce(init, channels, std::max<int64_t>(8, channels / 32)),
      expand_h(init, std::max<int64_t>(8, channels / 32), channels),
      expand_w(init, std::max<int64_t>(8, channels / 32), channels) {
  register_module("reduce", reduce);
  register_module("expand_h", expand_h);
  register_module("expand_w", expand_w);
}

std::pair<Var, Var> CoordinateAttention::gates(const Var& x) const {
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const Var along_h = mean_axis(x, 2, false);  // (B, H, C)
  const Var along_w = mean_axis(x, 1, false);  // (B, W, C)
  const Var mixed = relu(reduce(concat({along_h, along_w}, 1)));
  const Var gh = sigmoid(expand_h(slice(mixed, 1, 0, H)));
  const Var gw = sigmoid(expand_w(slice(mixed, 1, H, H + W)));
  return {reshape(gh, {B, H, 1, C}), reshape(gw, {B, 1, W, C})};
}

Var CoordinateAttention::operator()(const Var& x) const {
  const auto [gh, gw] = gates(x);
  return mul(mul(x, gh), gw);
}

GlobalFeatureEnhancer::GlobalFeatureEnhancer(Initializer& init, int64_t channels, int64_t heads)
    : embed(init, channels, channels), attn(init, channels, heads), norm(init, channels) {
  register_module("embed", embed);
  register_module("attn", attn);
  register_module("norm", norm);
}

Var GlobalFeatureEnhancer::operator()(const Var& map) const {
  const Var e = map_to_tokens(embed(map));
  return tokens_to_map(norm(add(e, attn(e))), map.dim(1), map.dim(2));
}

LocalFeatureEnhancer::LocalFeatureEnhancer(Initializer& init, int64_t channels)
    : conv1(init, channels, channels, 1),
      dwconv(init, channels, channels, 3, 1, 1, channels),
      conv2(init, channels, channels, 1) {
  register_module("conv1", conv1);
  register_module("dwconv", dwconv);
  register_module("conv2", conv2);
}

Var LocalFeatureEnhancer::operator()(const Var& map) const { return conv2(relu(dwconv(relu(conv1(map))))); }

GlobalRecalibration::GlobalRecalibration(Initializer& init, int64_t channels, int64_t heads)
    : rgb_to_x(init, channels, heads), x_to_rgb(init, channels, heads), norm(init, 2 * channels) {
  register_module("rgb_to_x", rgb_to_x);
  register_module("x_to_rgb", x_to_rgb);
  register_module("norm", norm);
}

Var GlobalRecalibration::normalized(const Var& g_rgb, const Var& g_x) const {
  if (g_rgb.shape() != g_x.shape())
    throw ArgumentError("GFRM inputs differ: " + to_string(g_rgb.shape()) + " vs " + to_string(g_x.shape()));
  const Var r = map_to_tokens(g_rgb);
  const Var x = map_to_tokens(g_x);
  const Var a = add(r, rgb_to_x(r, x));
  const Var b = add(x, x_to_rgb(x, r));
  return tokens_to_map(norm(concat({a, b}, 2)), g_rgb.dim(1), g_rgb.dim(2));
}

Var GlobalRecalibration::gate(const Var& g_rgb, const Var& g_x) const {
  const Var n = normalized(g_rgb, g_x);
  return sigmoid(mean_axis(mean_axis(n, 1, true), 2, true));
}

Var GlobalRecalibration::operator()(const Var& g_rgb, const Var& g_x) const {
  const Var n = normalized(g_rgb, g_x);
  return mul(n, sigmoid(mean_axis(mean_axis(n, 1, true), 2, true)));
}

LocalFusion::LocalFusion(Initializer& init, int64_t channels)
    : conv1(init, 2 * channels, 2 * channels, 1),
      dwconv(init, 2 * channels, 2 * channels, 3, 1, 1, 2 * channels),
      conv2(init, 2 * channels, 2 * channels, 1) {
  register_module("conv1", conv1);
  register_module("dwconv", dwconv);
  register_module("conv2", conv2);
}

Var LocalFusion::operator()(const Var& l_rgb, const Var& l_x) const {
  if (l_rgb.shape() != l_x.shape())
    throw ArgumentError("LFFM inputs differ: " + to_string(l_rgb.shape()) + " vs " + to_string(l_x.shape()));
  return conv2(gelu(dwconv(conv1(concat({l_rgb, l_x}, 3)))));
}

EnhanceIntegrate::EnhanceIntegrate(Initializer& init, int64_t channels)
    : coord(init, channels),
      refine_dw(init, channels, channels, 3, 1, 1, channels),
      refine_pw(init, channels, channels, 1) {
  register_parameter("branch_weights", branch_weights, init.constant({2}, 0.5));
  register_module("coord", coord);
  register_module("refine_dw", refine_dw);
  register_module("refine_pw", refine_pw);
}

Var EnhanceIntegrate::operator()(const Var& g_mm, const Var& l_mm) const {
  if (g_mm.shape() != l_mm.shape())
    throw ArgumentError("FEIM inputs differ: " + to_string(g_mm.shape()) + " vs " + to_string(l_mm.shape()));
  const Var s = add(mul(g_mm, slice(branch_weights, 0, 0, 1)), mul(l_mm, slice(branch_weights, 0, 1, 2)));
  const Var c = coord(s);
  return add(c, refine_pw(gelu(refine_dw(c))));
}

RoadFusionLevel::RoadFusionLevel(Initializer& init, int64_t channels, int64_t heads, int level)
    : gfe_rgb(init, channels, heads),
      gfe_x(init, channels, heads),
      lfe_rgb(init, channels),
      lfe_x(init, channels),
      gfrm(init, channels, heads),
      lffm(init, channels),
      feim(init, 2 * channels),
      level_(level) {
  register_module("gfe_rgb", gfe_rgb);
  register_module("gfe_x", gfe_x);
  register_module("lfe_rgb", lfe_rgb);
  register_module("lfe_x", lfe_x);
  register_module("gfrm", gfrm);
  register_module("lffm", lffm);
  register_module("feim", feim);
}

Var RoadFusionLevel::operator()(const Var& rgb, const Var& x) const {
  const std::string n = std::to_string(level_);
  const Var gr = gfe_rgb(rgb), gx = gfe_x(x), lr = lfe_rgb(rgb), lx = lfe_x(x);
  trace("fusion.gfe_rgb" + n, gr);
  trace("fusion.gfe_x" + n, gx);
  trace("fusion.lfe_rgb" + n, lr);
  trace("fusion.lfe_x" + n, lx);
  const Var g = gfrm(gr, gx);
  const Var l = lffm(lr, lx);
  trace("fusion.gfrm" + n, g);
  trace("fusion.lffm" + n, l);
  return feim(g, l);
}

RoadFusion::RoadFusion(Initializer& init, const std::array<int64_t, 4>& channels, int64_t heads) {
  for (size_t i = 0; i < 4; ++i) {
    levels.push_back(std::make_unique<RoadFusionLevel>(init, channels[i], heads, static_cast<int>(i) + 1));
    register_module("levels." + std::to_string(i), *levels.back());
  }
}

FeaturePyramid RoadFusion::operator()(const FeaturePyramid& rgb, const FeaturePyramid& x) const {
  check_levels(rgb, x, true, "road_fuse");
  FeaturePyramid out;
  for (size_t i = 0; i < 4; ++i) out.maps.push_back((*levels[i])(rgb.maps[i], x.maps[i]));
  return out;
}

FusionEncoder::FusionEncoder(Initializer& init, const FusionConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder_rgb = std::make_unique<ConvNextEncoder>(init, cfg.encoder_channels, cfg.encoder_depths);
  const bool specific = cfg.encoder_mode == EncoderMode::modality_specific && cfg.kind != FusionKind::rgb_only;
  register_module(specific ? "encoder_rgb" : "encoder", *encoder_rgb);
  if (specific) {
    encoder_aux = std::make_unique<ConvNextEncoder>(init, cfg.encoder_channels, cfg.encoder_depths);
    register_module("encoder_aux", *encoder_aux);
  }
  if (cfg.kind == FusionKind::concatenation) {
    for (size_t i = 0; i < 4; ++i) {
      const int64_t c = cfg.encoder_channels[i];
      reduce.push_back(std::make_unique<Conv2d>(init, 2 * c, c, 1));
      register_module("reduce." + std::to_string(i), *reduce.back());
    }
  }
  if (cfg.kind == FusionKind::road_fusion) {
    road = std::make_unique<RoadFusion>(init, cfg.encoder_channels, cfg.attn_heads);
    register_module("road", *road);
  }
  const auto widths = cfg.fused_channels();
  for (size_t i = 0; i < 4; ++i) {
    proj.push_back(std::make_unique<Linear>(init, widths[i], cfg.target_dim));
    register_module("proj." + std::to_string(i), *proj.back());
  }
}

const ConvNextEncoder& FusionEncoder::encoder(const std::string& id) const {
  if (id == "rgb") return *encoder_rgb;
  if (id == "aux") return encoder_aux ? *encoder_aux : *encoder_rgb;
  throw ArgumentError("unknown encoder id '" + id + "'");
}

FeaturePyramid FusionEncoder::encode_pyramid(const Var& image, const std::string& id) const {
  return encoder(id)(image);
}

FeaturePyramid FusionEncoder::fuse(const FeaturePyramid& rgb, const FeaturePyramid& x) const {
  switch (cfg_.kind) {
    case FusionKind::addition: return fuse_add(rgb, x);
    case FusionKind::concatenation: {
      FeaturePyramid cat = fuse_concat(rgb, x);
      for (size_t i = 0; i < 4; ++i) cat.maps[i] = (*reduce[i])(cat.maps[i]);
      return cat;
    }
    case FusionKind::road_fusion: return (*road)(rgb, x);
    case FusionKind::rgb_only: return rgb;
  }
  return rgb;
}

ProjectedFeatures FusionEncoder::project_and_stack(const FeaturePyramid& fused) const {
  const auto widths = cfg_.fused_channels();
  const auto got = fused.channels();
  if (got != widths) throw ArgumentError("fused pyramid channels do not match the projector");
  std::vector<Var> projected;
  for (size_t i = 0; i < 4; ++i) {
    projected.push_back((*proj[i])(fused.maps[i]));
    trace("fusion.projected" + std::to_string(i + 1), projected.back());
  }
  ProjectedFeatures out;
  out.f1 = projected[0];
  out.tokens = TokenMatrix::stack({projected[1], projected[2], projected[3]});
  trace("fusion.stacked", out.tokens.data);
  return out;
}

ProjectedFeatures FusionEncoder::operator()(const Var& rgb, const Var& aux) const {
  const FeaturePyramid pr = encode_pyramid(rgb, "rgb");
  for (size_t i = 0; i < 4; ++i) trace("fusion.rgb" + std::to_string(i + 1), pr.maps[i]);
  if (cfg_.kind == FusionKind::rgb_only) return project_and_stack(pr);
  const FeaturePyramid px = encode_pyramid(replicate_channels(aux), "aux");
  for (size_t i = 0; i < 4; ++i) trace("fusion.aux" + std::to_string(i + 1), px.maps[i]);
  const FeaturePyramid fused = fuse(pr, px);
  for (size_t i = 0; i < 4; ++i) trace("fusion.fused" + std::to_string(i + 1), fused.maps[i]);
  return project_and_stack(fused);
}

}  // namespace mmsam
