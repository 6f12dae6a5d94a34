#pragma once

#include <memory>

#include "mmsam/adapter.hpp"
#include "mmsam/backbone.hpp"
#include "mmsam/fusion.hpp"
#include "mmsam/head.hpp"
#include "mmsam/trace.hpp"

namespace mmsam {

struct ModelConfig {
  BackboneConfig backbone;
  FusionConfig fusion;
  AdapterConfig adapter;
  HeadConfig head;

  /// Checks every section and the cross-section constraints.
  void validate() const;

  /// Full-scale defaults (ViT-L, ConvNeXt-S widths, road fusion).
  static ModelConfig full_scale(int64_t num_classes = 25);
  /// Small configuration used by tests and the synthetic benchmark.
  static ModelConfig toy(int64_t num_classes = 4);
};

struct AdapterOutput {
  TokenMatrix f_mm;
  TokenMatrix f_sam;
  Var f1;
};

class MMSamModel : public Module {
 public:
  /// `meta` builds shapes only, with no parameter storage.
  MMSamModel(const ModelConfig& cfg, uint64_t seed, bool meta = false);

  const ModelConfig& config() const { return cfg_; }

  /// rgb (B, S, S, 3) and aux (B, S, S, 1 or 3), both normalized.
  AdapterOutput adapter_forward(const Var& rgb, const Var& aux) const;
  /// Logits (B, S, S, num_classes).
  Var forward(const Var& rgb, const Var& aux);

  int64_t backbone_parameters() const { return backbone.parameter_count(); }
  int64_t side_parameters() const { return fusion.parameter_count() + adapter.parameter_count(); }

  /// Applies backbone.finetune to the trainable flags.
  void apply_freeze();

  VitBackbone backbone;
  FusionEncoder fusion;
  Adapter adapter;
  SegHead head;

 private:
  ModelConfig cfg_;
};

/// Runs the full model symbolically on (batch, S, S, .) inputs and returns
/// the shape of every named intermediate.
ShapeTrace trace_shapes(const ModelConfig& cfg, int64_t batch = 1);

}  // namespace mmsam
