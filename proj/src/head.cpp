#include "mmsam/head.hpp"

#include "mmsam/error.hpp"
#include "mmsam/trace.hpp"

namespace mmsam {

void HeadConfig::validate() const {
  if (num_classes < 2) throw ConfigError("model.head.num_classes", "must be at least 2");
  if (decoder_dim < 1) throw ConfigError("model.head.decoder_dim", "must be positive");
  if (ignore_index >= 0 && ignore_index < num_classes)
    throw ConfigError("model.head.ignore_index", "must not collide with a class id");
}

std::vector<Var> refine_tokens(const TokenMatrix& f_mm) {
  f_mm.validate();
  if (f_mm.levels() != 3) throw InternalError("adapter output must carry 3 scales");
  std::vector<Var> maps = f_mm.level_maps();
  for (size_t i = 0; i < maps.size(); ++i) trace("head.refined" + std::to_string(i + 2), maps[i]);
  return maps;
}

LinearBnRelu::LinearBnRelu(Initializer& init, int64_t in, int64_t out) : linear(init, in, out, false), bn(init, out) {
  register_module("linear", linear);
  register_module("bn", bn);
}

SegHead::SegHead(Initializer& init, int64_t dim, const HeadConfig& cfg)
    : up(init, dim, dim, 2),
      fuse(init, 4 * cfg.decoder_dim, cfg.decoder_dim),
      classifier(init, cfg.decoder_dim, cfg.num_classes),
      cfg_(cfg) {
  cfg_.validate();
  register_module("up", up);
  for (int i = 0; i < 4; ++i) {
    scale_mlps.push_back(std::make_unique<LinearBnRelu>(init, dim, cfg.decoder_dim));
    register_module("scale_mlps." + std::to_string(i), *scale_mlps.back());
  }
  register_module("fuse", fuse);
  register_module("classifier", classifier);
}

std::vector<Var> SegHead::head_preprocess(const Var& f1, const std::vector<Var>& maps, const Var& f_sam_map) const {
  if (maps.size() != 3) throw ArgumentError("head_preprocess takes the stride-8/16/32 maps");
  const int64_t D = f1.dim(3);
  for (const Var* v : {&maps[0], &maps[1], &maps[2], &f_sam_map})
    if (v->value().rank() != 4 || v->dim(3) != D)
      throw ArgumentError("head inputs must share the channel width " + std::to_string(D));
  if (maps[0].dim(1) * 2 != f1.dim(1) || maps[0].dim(2) * 2 != f1.dim(2))
    throw ArgumentError("stride-8 map must be half the stride-4 resolution");
  std::vector<Var> levels{add(f1, up(maps[0])), maps[0], maps[1], maps[2]};
  std::vector<Var> mixed;
  for (size_t i = 0; i < 4; ++i) {
    mixed.push_back(add(levels[i], resize_bilinear(f_sam_map, levels[i].dim(1), levels[i].dim(2))));
    trace("head.mixed" + std::to_string(i + 1), mixed.back());
  }
  return mixed;
}

Var SegHead::decode(const std::vector<Var>& mixed, int64_t out_h, int64_t out_w) {
  if (mixed.size() != 4) throw ArgumentError("decode takes 4 mixed maps");
  const int64_t h4 = mixed[0].dim(1), w4 = mixed[0].dim(2);
  std::vector<Var> parts;
  for (size_t i = 0; i < 4; ++i) parts.push_back(resize_bilinear((*scale_mlps[i])(mixed[i]), h4, w4));
  const Var up_map = fuse(concat(parts, 3));
  trace("head.up", up_map);
  const Var logits = resize_bilinear(classifier(up_map), out_h, out_w);
  trace("head.logits", logits);
  return logits;
}

}  // namespace mmsam
