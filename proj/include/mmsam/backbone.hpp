#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmsam/checkpoint.hpp"
#include "mmsam/nn.hpp"
#include "mmsam/tokens.hpp"

namespace mmsam {

struct BackboneConfig {
  int64_t patch_size = 16;
  int64_t embed_dim = 1024;
  int64_t depth = 24;
  int64_t num_groups = 4;
  int64_t num_heads = 16;
  int64_t image_size = 1024;
  int64_t mlp_ratio = 4;
  bool finetune = true;
  /// Decomposed relative-position terms in every attention layer.
  bool use_rel_pos = false;
  /// Archive to initialize from; empty means scratch training.
  std::string pretrained;
  bool allow_pos_resize = true;

  void validate() const;
  int64_t grid() const { return image_size / patch_size; }
  int64_t layers_per_group() const { return depth / num_groups; }
};

class VitAttention : public Module {
 public:
  VitAttention(Initializer& init, int64_t dim, int64_t heads, int64_t grid, bool rel_pos);
  Var operator()(const Var& x) const;

  Linear qkv;
  Linear proj;
  Var rel_pos_h;
  Var rel_pos_w;

 private:
  int64_t dim_, heads_, grid_;
  bool rel_pos_;
};

class VitBlock : public Module {
 public:
  VitBlock(Initializer& init, const BackboneConfig& cfg);
  Var operator()(const Var& x) const;

  LayerNorm norm1;
  VitAttention attn;
  LayerNorm norm2;
  Mlp mlp;
};

class PatchEmbed : public Module {
 public:
  PatchEmbed(Initializer& init, int64_t patch, int64_t dim);
  Conv2d proj;
};

/// Plain ViT image encoder whose layers are split into `num_groups`
/// consecutive groups.
class VitBackbone : public Module {
 public:
  VitBackbone(Initializer& init, const BackboneConfig& cfg);

  const BackboneConfig& config() const { return cfg_; }
  /// Image (B, S, S, 3) -> single-scale tokens on the patch grid with the
  /// positional embedding added.
  TokenMatrix patch_embed(const Var& image) const;
  /// Runs layers [g * L/N, (g + 1) * L/N).
  TokenMatrix run_block_group(const TokenMatrix& tokens, int64_t group) const;
  /// patch_embed followed by every group.
  TokenMatrix forward(const Var& image) const;

  PatchEmbed embed;
  Var pos_embed;
  std::vector<std::unique_ptr<VitBlock>> blocks;

 private:
  BackboneConfig cfg_;
};

/// Bicubic (a = -0.75, half-pixel centers, clamped borders) resize of a
/// (1, h, w, D) grid.
Tensor resize_pos_embed(const Tensor& pos, int64_t new_h, int64_t new_w);

/// Linear resize of a (n, d) relative-position table along n.
Tensor resize_rel_pos(const Tensor& table, int64_t new_len);

/// Loads backbone arrays named "backbone.*" (or "image_encoder.*") from an
/// archive. Positional tables are resized when shapes differ and
/// `allow_pos_resize` is set; other mismatches and missing arrays raise
/// LoadError. The backbone is only modified when loading succeeds.
LoadReport load_pretrained(VitBackbone& backbone, const std::string& path, bool allow_pos_resize);
LoadReport load_pretrained(VitBackbone& backbone, const Archive& archive, bool allow_pos_resize);

}  // namespace mmsam
