#include "mmsam/adapter.hpp"

#include <cmath>
#include <numbers>

#include "mmsam/error.hpp"
#include "mmsam/trace.hpp"

namespace mmsam {

void AdapterConfig::validate(int64_t embed_dim, int64_t num_groups) const {
  if (num_pairs != num_groups)
    throw ConfigError("model.adapter.num_pairs", "must equal model.backbone.num_groups (" +
                                                     std::to_string(num_groups) + ")");
  if (msda_heads < 1 || embed_dim % msda_heads != 0)
    throw ConfigError("model.adapter.msda_heads", "must divide the embedding width");
  if (msda_points < 1) throw ConfigError("model.adapter.msda_points", "must be at least 1");
  if (!(ffn_ratio > 0.0)) throw ConfigError("model.adapter.ffn_ratio", "must be positive");
  if (!std::isfinite(gamma_init)) throw ConfigError("model.adapter.gamma_init", "must be finite");
}

Tensor reference_points(const TokenMatrix& query, int64_t kv_levels) {
  query.validate();
  Tensor ref({query.tokens(), kv_levels, 2});
  for (size_t s = 0; s < query.levels(); ++s) {
    const auto [h, w] = query.scale_shapes[s];
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const int64_t t = query.scale_offsets[s] + y * w + x;
        for (int64_t l = 0; l < kv_levels; ++l) {
          ref[(t * kv_levels + l) * 2] = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
          ref[(t * kv_levels + l) * 2 + 1] = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
        }
      }
  }
  return ref;
}

namespace {

Tensor xavier(Initializer& init, int64_t out, int64_t in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
  return init.uniform({out, in}, -bound, bound);
}

}  // namespace

MsDeformAttn::MsDeformAttn(Initializer& init, int64_t dim, int64_t heads, int64_t levels, int64_t points)
    : sampling_offsets(init, dim, heads * levels * points * 2),
      attention_weights(init, dim, heads * levels * points),
      value_proj(init, dim, dim),
      output_proj(init, dim, dim),
      dim_(dim),
      heads_(heads),
      levels_(levels),
      points_(points) {
  if (heads < 1 || dim % heads != 0) throw ArgumentError("msda heads must divide the width");
  sampling_offsets.weight.mutable_value() = init.zeros({heads * levels * points * 2, dim});
  Tensor bias = init.zeros({heads * levels * points * 2});
  if (!bias.is_meta()) {
    for (int64_t h = 0; h < heads; ++h) {
      const double theta = 2.0 * std::numbers::pi * static_cast<double>(h) / static_cast<double>(heads);
      const double cx = std::cos(theta), cy = std::sin(theta);
      const double norm = std::max(std::abs(cx), std::abs(cy));
      for (int64_t l = 0; l < levels; ++l)
        for (int64_t p = 0; p < points; ++p) {
          const int64_t i = ((h * levels + l) * points + p) * 2;
          bias[i] = cx / norm * static_cast<double>(p + 1);
          bias[i + 1] = cy / norm * static_cast<double>(p + 1);
        }
    }
  }
  sampling_offsets.bias.mutable_value() = std::move(bias);
  attention_weights.weight.mutable_value() = init.zeros({heads * levels * points, dim});
  value_proj.weight.mutable_value() = xavier(init, dim, dim);
  output_proj.weight.mutable_value() = xavier(init, dim, dim);
  register_module("sampling_offsets", sampling_offsets);
  register_module("attention_weights", attention_weights);
  register_module("value_proj", value_proj);
  register_module("output_proj", output_proj);
}

Var MsDeformAttn::attention_weights_of(const Var& query) const {
  const int64_t B = query.dim(0), Tq = query.dim(1);
  const Var logits = reshape(attention_weights(query), {B, Tq, heads_, levels_ * points_});
  return reshape(softmax(logits), {B, Tq, heads_, levels_, points_});
}

Var MsDeformAttn::operator()(const Var& query, const Tensor& reference, const TokenMatrix& kv) const {
  if (query.value().rank() != 3 || query.dim(2) != dim_ || kv.width() != dim_)
    throw ArgumentError("msda width mismatch: query " + to_string(query.shape()) + ", kv " +
                        to_string(kv.data.shape()) + ", expected D=" + std::to_string(dim_));
  if (kv.scale_shapes.empty()) throw ArgumentError("msda: key/value tokens carry no scale metadata");
  if (static_cast<int64_t>(kv.levels()) != levels_)
    throw ArgumentError("msda expects " + std::to_string(levels_) + " key/value levels, got " +
                        std::to_string(kv.levels()));
  kv.validate();
  const int64_t B = query.dim(0), Tq = query.dim(1);
  MsdaLevels lv;
  for (size_t l = 0; l < kv.levels(); ++l) {
    lv.height.push_back(kv.scale_shapes[l].first);
    lv.width.push_back(kv.scale_shapes[l].second);
    lv.start.push_back(kv.scale_offsets[l]);
  }
  const Var value = value_proj(kv.data);
  const Var offsets = reshape(sampling_offsets(query), {B, Tq, heads_, levels_, points_, 2});
  const Var weights = attention_weights_of(query);
  return output_proj(msda_sample(value, offsets, weights, reference, lv, heads_));
}

Injector::Injector(Initializer& init, int64_t dim, const AdapterConfig& cfg, int64_t kv_levels)
    : query_norm(init, dim),
      feat_norm(init, dim),
      attn(init, dim, cfg.msda_heads, kv_levels, cfg.msda_points) {
  register_module("query_norm", query_norm);
  register_module("feat_norm", feat_norm);
  register_module("attn", attn);
  register_parameter("gamma", gamma, init.constant({dim}, cfg.gamma_init));
}

TokenMatrix Injector::operator()(const TokenMatrix& f_sam, const TokenMatrix& f_mm) const {
  if (f_sam.width() != f_mm.width() || f_sam.width() != gamma.dim(0))
    throw ArgumentError("injector width mismatch: " + std::to_string(f_sam.width()) + " vs " +
                        std::to_string(f_mm.width()));
  if (f_sam.levels() != 1) throw ArgumentError("injector queries must be single-scale backbone tokens");
  const Tensor ref = reference_points(f_sam, static_cast<int64_t>(f_mm.levels()));
  const Var a = attn(query_norm(f_sam.data), ref, f_mm.with_data(feat_norm(f_mm.data)));
  return f_sam.with_data(add(f_sam.data, mul(a, gamma)));
}

ScaleFfn::ScaleFfn(Initializer& init, int64_t dim, int64_t hidden)
    : fc1(init, dim, hidden), dwconv(init, hidden, hidden, 3, 1, 1, hidden), fc2(init, hidden, dim) {
  register_module("fc1", fc1);
  register_module("dwconv", dwconv);
  register_module("fc2", fc2);
}

Var ScaleFfn::operator()(const TokenMatrix& x) const {
  const TokenMatrix hidden = x.with_data(fc1(x.data));
  std::vector<Var> parts;
  for (size_t s = 0; s < hidden.levels(); ++s) parts.push_back(map_to_tokens(dwconv(hidden.level_map(s))));
  const Var mixed = parts.size() == 1 ? parts[0] : concat(parts, 1);
  return fc2(gelu(mixed));
}

Extractor::Extractor(Initializer& init, int64_t dim, const AdapterConfig& cfg)
    : query_norm(init, dim),
      feat_norm(init, dim),
      attn(init, dim, cfg.msda_heads, 1, cfg.msda_points),
      ffn_norm(init, dim),
      ffn(init, dim, std::max<int64_t>(1, static_cast<int64_t>(std::llround(cfg.ffn_ratio * dim)))) {
  register_module("query_norm", query_norm);
  register_module("feat_norm", feat_norm);
  register_module("attn", attn);
  register_module("ffn_norm", ffn_norm);
  register_module("ffn", ffn);
}

TokenMatrix Extractor::operator()(const TokenMatrix& f_mm, const TokenMatrix& f_sam) const {
  if (f_sam.width() != f_mm.width())
    throw ArgumentError("extractor width mismatch: " + std::to_string(f_mm.width()) + " vs " +
                        std::to_string(f_sam.width()));
  if (f_sam.levels() != 1) throw ArgumentError("extractor keys must be single-scale backbone tokens");
  const Tensor ref = reference_points(f_mm, 1);
  const Var a = attn(query_norm(f_mm.data), ref, f_sam.with_data(feat_norm(f_sam.data)));
  const TokenMatrix x = f_mm.with_data(add(f_mm.data, a));
  return x.with_data(add(x.data, ffn(x.with_data(ffn_norm(x.data)))));
}

Adapter::Adapter(Initializer& init, int64_t dim, const AdapterConfig& cfg) : cfg_(cfg) {
  for (int64_t i = 0; i < cfg.num_pairs; ++i) {
    injectors.push_back(std::make_unique<Injector>(init, dim, cfg, 3));
    register_module("injectors." + std::to_string(i), *injectors.back());
    extractors.push_back(std::make_unique<Extractor>(init, dim, cfg));
    register_module("extractors." + std::to_string(i), *extractors.back());
  }
}

}  // namespace mmsam
