#pragma once

#include <memory>
#include <vector>

#include "mmsam/nn.hpp"
#include "mmsam/tokens.hpp"

namespace mmsam {

struct AdapterConfig {
  int64_t num_pairs = 4;
  int64_t msda_heads = 8;
  int64_t msda_points = 4;
  double ffn_ratio = 0.25;
  double gamma_init = 0.0;

  void validate(int64_t embed_dim, int64_t num_groups) const;
};

/// Normalized (x, y) cell centers of every token in `query`, repeated for
/// `kv_levels` key/value levels: (Tq, kv_levels, 2).
Tensor reference_points(const TokenMatrix& query, int64_t kv_levels);

/// Multi-scale deformable cross attention.
class MsDeformAttn : public Module {
 public:
  MsDeformAttn(Initializer& init, int64_t dim, int64_t heads, int64_t levels, int64_t points);

  /// query (B, Tq, D); kv carries one scale per level.
  Var operator()(const Var& query, const Tensor& reference, const TokenMatrix& kv) const;
  /// Softmax-normalized weights (B, Tq, heads, L, P) for `query`.
  Var attention_weights_of(const Var& query) const;

  int64_t heads() const { return heads_; }
  int64_t levels() const { return levels_; }
  int64_t points() const { return points_; }

  Linear sampling_offsets;
  Linear attention_weights;
  Linear value_proj;
  Linear output_proj;

 private:
  int64_t dim_, heads_, levels_, points_;
};

/// F + gamma * msda(norm(F), norm(F_mm)).
class Injector : public Module {
 public:
  Injector(Initializer& init, int64_t dim, const AdapterConfig& cfg, int64_t kv_levels);
  TokenMatrix operator()(const TokenMatrix& f_sam, const TokenMatrix& f_mm) const;

  LayerNorm query_norm;
  LayerNorm feat_norm;
  MsDeformAttn attn;
  Var gamma;
};

/// Linear, per-scale depthwise 3x3, GELU, linear over stacked tokens.
class ScaleFfn : public Module {
 public:
  ScaleFfn(Initializer& init, int64_t dim, int64_t hidden);
  Var operator()(const TokenMatrix& x) const;

  Linear fc1;
  Conv2d dwconv;
  Linear fc2;
};

/// x = F_mm + msda(norm(F_mm), norm(F_sam)); x + ffn(norm(x)).
class Extractor : public Module {
 public:
  Extractor(Initializer& init, int64_t dim, const AdapterConfig& cfg);
  TokenMatrix operator()(const TokenMatrix& f_mm, const TokenMatrix& f_sam) const;

  LayerNorm query_norm;
  LayerNorm feat_norm;
  MsDeformAttn attn;
  LayerNorm ffn_norm;
  ScaleFfn ffn;
};

class Adapter : public Module {
 public:
  Adapter(Initializer& init, int64_t dim, const AdapterConfig& cfg);

  const AdapterConfig& config() const { return cfg_; }

  std::vector<std::unique_ptr<Injector>> injectors;
  std::vector<std::unique_ptr<Extractor>> extractors;

 private:
  AdapterConfig cfg_;
};

}  // namespace mmsam
