#include "mmsam/model.hpp"

#include "mmsam/error.hpp"

namespace mmsam {

void ModelConfig::validate() const {
  backbone.validate();
  fusion.validate();
  head.validate();
  adapter.validate(backbone.embed_dim, backbone.num_groups);
  if (fusion.target_dim != backbone.embed_dim)
    throw ConfigError("model.fusion.target_dim", "must equal model.backbone.embed_dim");
  if (backbone.image_size % 32 != 0) throw ConfigError("model.backbone.image_size", "must be a multiple of 32");
  if (backbone.patch_size != 16)
    throw ConfigError("model.backbone.patch_size", "the adapter geometry assumes stride-16 backbone tokens");
}

ModelConfig ModelConfig::full_scale(int64_t num_classes) {
  ModelConfig cfg;
  cfg.head.num_classes = num_classes;
  return cfg;
}

ModelConfig ModelConfig::toy(int64_t num_classes) {
  ModelConfig cfg;
  cfg.backbone.embed_dim = 64;
  cfg.backbone.depth = 8;
  cfg.backbone.num_groups = 4;
  cfg.backbone.num_heads = 4;
  cfg.backbone.image_size = 64;
  cfg.fusion.encoder_channels = {16, 32, 64, 128};
  cfg.fusion.encoder_depths = {1, 1, 1, 1};
  cfg.fusion.target_dim = 64;
  cfg.adapter.msda_heads = 4;
  cfg.head.num_classes = num_classes;
  cfg.head.decoder_dim = 64;
  return cfg;
}

namespace {

// Each sub-network draws from its own stream so that changing one section
// (e.g. the fusion kind) leaves the others' initial weights unchanged.
struct Streams {
  Initializer backbone, fusion, adapter, head;
  Streams(uint64_t seed, bool meta)
      : backbone(seed * 4 + 1, meta), fusion(seed * 4 + 2, meta), adapter(seed * 4 + 3, meta), head(seed * 4 + 4, meta) {}
};

thread_local std::unique_ptr<Streams> t_streams;

Streams& make_streams(const ModelConfig& cfg, uint64_t seed, bool meta) {
  cfg.validate();
  t_streams = std::make_unique<Streams>(seed, meta);
  return *t_streams;
}

}  // namespace

MMSamModel::MMSamModel(const ModelConfig& cfg, uint64_t seed, bool meta)
    : backbone(make_streams(cfg, seed, meta).backbone, cfg.backbone),
      fusion(t_streams->fusion, cfg.fusion),
      adapter(t_streams->adapter, cfg.backbone.embed_dim, cfg.adapter),
      head(t_streams->head, cfg.backbone.embed_dim, cfg.head),
      cfg_(cfg) {
  t_streams.reset();
  register_module("backbone", backbone);
  register_module("fusion", fusion);
  register_module("adapter", adapter);
  register_module("head", head);
  apply_freeze();
}

void MMSamModel::apply_freeze() { backbone.set_trainable(cfg_.backbone.finetune); }

AdapterOutput MMSamModel::adapter_forward(const Var& rgb, const Var& aux) const {
  const ProjectedFeatures proj = fusion(rgb, aux);
  TokenMatrix f_mm = proj.tokens;
  TokenMatrix tokens = backbone.patch_embed(rgb);
  for (int64_t i = 0; i < cfg_.backbone.num_groups; ++i) {
    const auto idx = static_cast<size_t>(i);
    tokens = (*adapter.injectors[idx])(tokens, f_mm);
    trace("adapter.inject" + std::to_string(i + 1), tokens.data);
    tokens = backbone.run_block_group(tokens, i);
    f_mm = (*adapter.extractors[idx])(f_mm, tokens);
    trace("adapter.extract" + std::to_string(i + 1), f_mm.data);
  }
  return {f_mm, tokens, proj.f1};
}

Var MMSamModel::forward(const Var& rgb, const Var& aux) {
  const AdapterOutput out = adapter_forward(rgb, aux);
  const std::vector<Var> maps = refine_tokens(out.f_mm);
  const Var sam_map = out.f_sam.level_map(0);
  const std::vector<Var> mixed = head.head_preprocess(out.f1, maps, sam_map);
  return head.decode(mixed, rgb.dim(1), rgb.dim(2));
}

ShapeTrace trace_shapes(const ModelConfig& cfg, int64_t batch) {
  MMSamModel model(cfg, 0, true);
  ShapeTrace trace;
  TraceScope scope(trace);
  const int64_t s = cfg.backbone.image_size;
  const Var rgb(Tensor::meta({batch, s, s, 3}));
  const Var aux(Tensor::meta({batch, s, s, 1}));
  model.forward(rgb, aux);
  return trace;
}

}  // namespace mmsam
