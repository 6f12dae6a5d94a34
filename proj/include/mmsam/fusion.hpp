#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "mmsam/nn.hpp"
#include "mmsam/tokens.hpp"

namespace mmsam {

/// Four NHWC maps at strides 4, 8, 16, 32.
struct FeaturePyramid {
  std::vector<Var> maps;

  std::array<int64_t, 4> channels() const;
  void validate() const;
};

enum class FusionKind { addition, concatenation, road_fusion, rgb_only };
enum class EncoderMode { modality_specific, modality_agnostic };

std::string to_string(FusionKind kind);
std::string to_string(EncoderMode mode);
FusionKind parse_fusion_kind(const std::string& text);
EncoderMode parse_encoder_mode(const std::string& text);

struct FusionConfig {
  FusionKind kind = FusionKind::road_fusion;
  EncoderMode encoder_mode = EncoderMode::modality_specific;
  std::array<int64_t, 4> encoder_channels{96, 192, 384, 768};
  std::array<int64_t, 4> encoder_depths{3, 3, 27, 3};
  /// Heads of the GFE self attention and GFRM cross attention.
  int64_t attn_heads = 4;
  int64_t target_dim = 1024;

  void validate() const;
  /// Per-level widths presented to the projector.
  std::array<int64_t, 4> fused_channels() const;
};

class ConvNextBlock : public Module {
 public:
  ConvNextBlock(Initializer& init, int64_t dim);
  Var operator()(const Var& x) const;

  Conv2d dwconv;
  LayerNorm norm;
  Linear pwconv1;
  Linear pwconv2;
  Var gamma;
};

class ConvNextStage : public Module {
 public:
  ConvNextStage(Initializer& init, int64_t in, int64_t out, int64_t depth, bool stem);
  Var operator()(const Var& x) const;

  std::unique_ptr<LayerNorm> down_norm;
  Conv2d down;
  std::unique_ptr<LayerNorm> stem_norm;
  std::vector<std::unique_ptr<ConvNextBlock>> blocks;

 private:
  bool stem_;
};

/// Hierarchical four-stage convolutional encoder.
class ConvNextEncoder : public Module {
 public:
  ConvNextEncoder(Initializer& init, const std::array<int64_t, 4>& channels, const std::array<int64_t, 4>& depths);
  /// (B, H, W, 3) with H, W multiples of 32.
  FeaturePyramid operator()(const Var& image) const;

  std::vector<std::unique_ptr<ConvNextStage>> stages;
  std::vector<std::unique_ptr<LayerNorm>> out_norms;
};

/// (B, H, W, 1) -> (B, H, W, 3); three-channel input passes through.
Var replicate_channels(const Var& aux);

FeaturePyramid fuse_add(const FeaturePyramid& rgb, const FeaturePyramid& x);
/// Channel concatenation per level, before any reduction.
FeaturePyramid fuse_concat(const FeaturePyramid& rgb, const FeaturePyramid& x);

class CoordinateAttention : public Module {
 public:
  CoordinateAttention(Initializer& init, int64_t channels);
  Var operator()(const Var& x) const;
  /// Height gate (B, H, 1, C) and width gate (B, 1, W, C).
  std::pair<Var, Var> gates(const Var& x) const;

  Linear reduce;
  Linear expand_h;
  Linear expand_w;
};

class GlobalFeatureEnhancer : public Module {
 public:
  GlobalFeatureEnhancer(Initializer& init, int64_t channels, int64_t heads);
  Var operator()(const Var& map) const;

  Linear embed;
  SelfAttention attn;
  LayerNorm norm;
};

class LocalFeatureEnhancer : public Module {
 public:
  LocalFeatureEnhancer(Initializer& init, int64_t channels);
  Var operator()(const Var& map) const;

  Conv2d conv1;
  Conv2d dwconv;
  Conv2d conv2;
};

class GlobalRecalibration : public Module {
 public:
  GlobalRecalibration(Initializer& init, int64_t channels, int64_t heads);
  Var operator()(const Var& g_rgb, const Var& g_x) const;
  /// Channel gate (B, 1, 1, 2C) applied to the normalized concatenation.
  Var gate(const Var& g_rgb, const Var& g_x) const;

  CrossAttention rgb_to_x;
  CrossAttention x_to_rgb;
  LayerNorm norm;

 private:
  Var normalized(const Var& g_rgb, const Var& g_x) const;
};

class LocalFusion : public Module {
 public:
  LocalFusion(Initializer& init, int64_t channels);
  Var operator()(const Var& l_rgb, const Var& l_x) const;

  Conv2d conv1;
  Conv2d dwconv;
  Conv2d conv2;
};

class EnhanceIntegrate : public Module {
 public:
  EnhanceIntegrate(Initializer& init, int64_t channels);
  Var operator()(const Var& g_mm, const Var& l_mm) const;

  /// Two branch weights (global, local).
  Var branch_weights;
  CoordinateAttention coord;
  Conv2d refine_dw;
  Conv2d refine_pw;
};

/// One pyramid level of the road-fusion block.
class RoadFusionLevel : public Module {
 public:
  RoadFusionLevel(Initializer& init, int64_t channels, int64_t heads, int level = 1);
  Var operator()(const Var& rgb, const Var& x) const;

  GlobalFeatureEnhancer gfe_rgb;
  GlobalFeatureEnhancer gfe_x;
  LocalFeatureEnhancer lfe_rgb;
  LocalFeatureEnhancer lfe_x;
  GlobalRecalibration gfrm;
  LocalFusion lffm;
  EnhanceIntegrate feim;

 private:
  int level_;
};

class RoadFusion : public Module {
 public:
  RoadFusion(Initializer& init, const std::array<int64_t, 4>& channels, int64_t heads);
  FeaturePyramid operator()(const FeaturePyramid& rgb, const FeaturePyramid& x) const;

  std::vector<std::unique_ptr<RoadFusionLevel>> levels;
};

/// Stride-4 map for the head plus the stacked stride-8/16/32 tokens.
struct ProjectedFeatures {
  Var f1;
  TokenMatrix tokens;
};

/// Modality encoders, the configured fusion module, and the projector.
class FusionEncoder : public Module {
 public:
  FusionEncoder(Initializer& init, const FusionConfig& cfg);

  const FusionConfig& config() const { return cfg_; }
  /// "rgb" or "aux"; both resolve to one encoder in modality-agnostic mode.
  const ConvNextEncoder& encoder(const std::string& id) const;
  FeaturePyramid encode_pyramid(const Var& image, const std::string& id) const;
  FeaturePyramid fuse(const FeaturePyramid& rgb, const FeaturePyramid& x) const;
  ProjectedFeatures project_and_stack(const FeaturePyramid& fused) const;
  /// rgb (B, H, W, 3), aux (B, H, W, 1 or 3); aux is ignored for rgb_only.
  ProjectedFeatures operator()(const Var& rgb, const Var& aux) const;

  std::unique_ptr<ConvNextEncoder> encoder_rgb;
  std::unique_ptr<ConvNextEncoder> encoder_aux;
  std::vector<std::unique_ptr<Conv2d>> reduce;
  std::unique_ptr<RoadFusion> road;
  std::vector<std::unique_ptr<Linear>> proj;

 private:
  FusionConfig cfg_;
};

}  // namespace mmsam
