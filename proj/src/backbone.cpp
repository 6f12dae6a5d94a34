#include "mmsam/backbone.hpp"

#include <array>
#include <cmath>

#include "mmsam/error.hpp"
#include "mmsam/trace.hpp"

namespace mmsam {

void BackboneConfig::validate() const {
  if (patch_size < 1) throw ConfigError("model.backbone.patch_size", "must be positive");
  if (embed_dim < 1) throw ConfigError("model.backbone.embed_dim", "must be positive");
  if (depth < 1) throw ConfigError("model.backbone.depth", "must be positive");
  if (num_groups < 1 || depth % num_groups != 0)
    throw ConfigError("model.backbone.num_groups", "must divide depth (" + std::to_string(depth) + ")");
  if (num_heads < 1 || embed_dim % num_heads != 0)
    throw ConfigError("model.backbone.num_heads", "must divide embed_dim (" + std::to_string(embed_dim) + ")");
  if (image_size < 1 || image_size % patch_size != 0)
    throw ConfigError("model.backbone.image_size", "must be a positive multiple of patch_size");
  if (mlp_ratio < 1) throw ConfigError("model.backbone.mlp_ratio", "must be positive");
}

VitAttention::VitAttention(Initializer& init, int64_t dim, int64_t heads, int64_t grid, bool rel_pos)
    : qkv(init, dim, 3 * dim), proj(init, dim, dim), dim_(dim), heads_(heads), grid_(grid), rel_pos_(rel_pos) {
  register_module("qkv", qkv);
  register_module("proj", proj);
  if (rel_pos_) {
    register_parameter("rel_pos_h", rel_pos_h, init.zeros({2 * grid - 1, dim / heads}));
    register_parameter("rel_pos_w", rel_pos_w, init.zeros({2 * grid - 1, dim / heads}));
  }
}

Var VitAttention::operator()(const Var& x) const {
  const Var packed = qkv(x);
  const Var q = slice(packed, -1, 0, dim_);
  const Var k = slice(packed, -1, dim_, 2 * dim_);
  const Var v = slice(packed, -1, 2 * dim_, 3 * dim_);
  Var bias;
  if (rel_pos_) bias = rel_pos_bias(q, rel_pos_h, rel_pos_w, grid_, grid_, heads_);
  return proj(attention(q, k, v, heads_, bias));
}

VitBlock::VitBlock(Initializer& init, const BackboneConfig& cfg)
    : norm1(init, cfg.embed_dim),
      attn(init, cfg.embed_dim, cfg.num_heads, cfg.grid(), cfg.use_rel_pos),
      norm2(init, cfg.embed_dim),
      mlp(init, cfg.embed_dim, cfg.mlp_ratio * cfg.embed_dim) {
  register_module("norm1", norm1);
  register_module("attn", attn);
  register_module("norm2", norm2);
  register_module("mlp", mlp);
}

Var VitBlock::operator()(const Var& x) const {
  const Var h = add(x, attn(norm1(x)));
  return add(h, mlp(norm2(h)));
}

PatchEmbed::PatchEmbed(Initializer& init, int64_t patch, int64_t dim) : proj(init, 3, dim, patch, patch, 0) {
  register_module("proj", proj);
}

VitBackbone::VitBackbone(Initializer& init, const BackboneConfig& cfg)
    : embed((cfg.validate(), init), cfg.patch_size, cfg.embed_dim), cfg_(cfg) {
  register_module("patch_embed", embed);
  register_parameter("pos_embed", pos_embed, init.trunc_normal({1, cfg.grid(), cfg.grid(), cfg.embed_dim}, 0.02));
  for (int64_t i = 0; i < cfg.depth; ++i) {
    blocks.push_back(std::make_unique<VitBlock>(init, cfg));
    register_module("blocks." + std::to_string(i), *blocks.back());
  }
}

TokenMatrix VitBackbone::patch_embed(const Var& image) const {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != cfg_.image_size || s[2] != cfg_.image_size || s[3] != 3)
    throw ConfigError("model.backbone.image_size", "image of shape " + to_string(s) + " does not match (B, " +
                                                       std::to_string(cfg_.image_size) + ", " +
                                                       std::to_string(cfg_.image_size) + ", 3)");
  const Var tokens = add(embed.proj(image), pos_embed);
  trace("backbone.embed", tokens);
  return TokenMatrix::single(tokens);
}

TokenMatrix VitBackbone::run_block_group(const TokenMatrix& tokens, int64_t group) const {
  if (group < 0 || group >= cfg_.num_groups)
    throw ArgumentError("block group " + std::to_string(group) + " outside [0, " + std::to_string(cfg_.num_groups) +
                        ")");
  if (tokens.levels() != 1 || tokens.scale_shapes[0] != std::pair{cfg_.grid(), cfg_.grid()})
    throw ArgumentError("block groups take single-scale tokens on the patch grid");
  Var x = tokens.data;
  const int64_t per = cfg_.layers_per_group();
  for (int64_t i = group * per; i < (group + 1) * per; ++i) x = (*blocks[static_cast<size_t>(i)])(x);
  trace("backbone.block" + std::to_string(group + 1), x);
  return tokens.with_data(x);
}

TokenMatrix VitBackbone::forward(const Var& image) const {
  TokenMatrix t = patch_embed(image);
  for (int64_t g = 0; g < cfg_.num_groups; ++g) t = run_block_group(t, g);
  return t;
}

namespace {

double cubic_weight(double x) {
  constexpr double a = -0.75;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::array<int64_t, 4> index;
  std::array<double, 4> weight;
};

Taps cubic_taps(int64_t out, int64_t in_size, int64_t out_size) {
  const double src = (static_cast<double>(out) + 0.5) * static_cast<double>(in_size) / static_cast<double>(out_size) - 0.5;
  const double base = std::floor(src);
  const double t = src - base;
  Taps taps;
  for (int k = 0; k < 4; ++k) {
    const int64_t idx = static_cast<int64_t>(base) + k - 1;
    taps.index[k] = std::clamp<int64_t>(idx, 0, in_size - 1);
    taps.weight[k] = cubic_weight(t - (k - 1));
  }
  return taps;
}

}  // namespace

Tensor resize_pos_embed(const Tensor& pos, int64_t new_h, int64_t new_w) {
  if (pos.rank() != 4 || pos.dim(0) != 1) throw ArgumentError("positional grid must be (1, h, w, D)");
  if (new_h < 1 || new_w < 1 || pos.dim(1) < 1 || pos.dim(2) < 1) throw ArgumentError("grid sizes must be positive");
  const int64_t h = pos.dim(1), w = pos.dim(2), d = pos.dim(3);
  if (h == new_h && w == new_w) return pos;
  if (pos.is_meta()) return Tensor::meta({1, new_h, new_w, d});
  // Separable: columns first, then rows.
  Tensor tmp({1, h, new_w, d});
  for (int64_t x = 0; x < new_w; ++x) {
    const Taps t = cubic_taps(x, w, new_w);
    for (int64_t y = 0; y < h; ++y)
      for (int k = 0; k < 4; ++k) {
        const double* src = pos.ptr() + (y * w + t.index[k]) * d;
        double* dst = tmp.ptr() + (y * new_w + x) * d;
        for (int64_t c = 0; c < d; ++c) dst[c] += t.weight[k] * src[c];
      }
  }
  Tensor out({1, new_h, new_w, d});
  for (int64_t y = 0; y < new_h; ++y) {
    const Taps t = cubic_taps(y, h, new_h);
    for (int k = 0; k < 4; ++k)
      for (int64_t x = 0; x < new_w; ++x) {
        const double* src = tmp.ptr() + (t.index[k] * new_w + x) * d;
        double* dst = out.ptr() + (y * new_w + x) * d;
        for (int64_t c = 0; c < d; ++c) dst[c] += t.weight[k] * src[c];
      }
  }
  return out;
}

Tensor resize_rel_pos(const Tensor& table, int64_t new_len) {
  if (table.rank() != 2 || table.dim(0) < 1 || new_len < 1) throw ArgumentError("relative table must be (n, d)");
  const int64_t n = table.dim(0), d = table.dim(1);
  if (n == new_len) return table;
  Tensor out({new_len, d});
  for (int64_t i = 0; i < new_len; ++i) {
    const double src = std::max(0.0, (static_cast<double>(i) + 0.5) * static_cast<double>(n) / new_len - 0.5);
    const int64_t i0 = std::min<int64_t>(static_cast<int64_t>(src), n - 1);
    const int64_t i1 = std::min<int64_t>(i0 + 1, n - 1);
    const double t = src - static_cast<double>(i0);
    for (int64_t c = 0; c < d; ++c) out[i * d + c] = (1.0 - t) * table[i0 * d + c] + t * table[i1 * d + c];
  }
  return out;
}

LoadReport load_pretrained(VitBackbone& backbone, const std::string& path, bool allow_pos_resize) {
  return load_pretrained(backbone, read_archive(path), allow_pos_resize);
}

LoadReport load_pretrained(VitBackbone& backbone, const Archive& archive, bool allow_pos_resize) {
  static const std::array<std::string, 2> kPrefixes{"backbone.", "image_encoder."};
  auto lookup = [&](const std::string& name) -> const Tensor* {
    for (const auto& p : kPrefixes)
      if (archive.contains(p + name)) return &archive.at(p + name);
    return nullptr;
  };

  LoadReport report;
  std::vector<std::pair<Var*, Tensor>> staged;
  std::vector<std::string> known;
  for (const ParamRef& p : backbone.named_parameters()) {
    known.push_back(p.name);
    const Tensor* src = lookup(p.name);
    if (!src) {
      report.missing.push_back("backbone." + p.name);
      continue;
    }
    const Shape& want = p.var->shape();
    Tensor value = *src;
    if (value.shape() != want) {
      const bool is_pos = p.name == "pos_embed";
      const bool is_rel = p.name.ends_with("rel_pos_h") || p.name.ends_with("rel_pos_w");
      if (!allow_pos_resize || !(is_pos || is_rel) || value.rank() != static_cast<int64_t>(want.size()) ||
          value.shape().back() != want.back())
        throw LoadError("shape mismatch for backbone." + p.name + ": archive " + to_string(value.shape()) +
                        ", model " + to_string(want));
      value = is_pos ? resize_pos_embed(value, want[1], want[2]) : resize_rel_pos(value, want[0]);
      report.resized.push_back("backbone." + p.name);
    }
    staged.emplace_back(p.var, std::move(value));
    report.matched.push_back("backbone." + p.name);
  }
  if (!report.missing.empty()) {
    std::string list;
    for (const auto& m : report.missing) list += (list.empty() ? "" : ", ") + m;
    throw LoadError("pretrained archive lacks required arrays: " + list);
  }
  for (const auto& [name, value] : archive.arrays) {
    for (const auto& p : kPrefixes) {
      if (!name.starts_with(p)) continue;
      const std::string rest = name.substr(p.size());
      if (std::find(known.begin(), known.end(), rest) == known.end()) report.unmatched.push_back(name);
    }
  }
  for (auto& [var, value] : staged) var->mutable_value() = std::move(value);
  return report;
}

}  // namespace mmsam
