#include "mmsam/tokens.hpp"

#include "mmsam/error.hpp"
#include "mmsam/nn.hpp"
#include "mmsam/ops.hpp"

namespace mmsam {

TokenMatrix TokenMatrix::single(const Var& map) { return stack({map}); }

TokenMatrix TokenMatrix::stack(const std::vector<Var>& maps) {
  if (maps.empty()) throw ArgumentError("cannot stack zero maps");
  TokenMatrix out;
  std::vector<Var> parts;
  int64_t offset = 0;
  for (const Var& m : maps) {
    if (m.value().rank() != 4) throw ArgumentError("expected an NHWC map, got " + to_string(m.shape()));
    if (m.dim(0) != maps[0].dim(0) || m.dim(3) != maps[0].dim(3))
      throw ArgumentError("stacked maps must share batch and width");
    out.scale_shapes.emplace_back(m.dim(1), m.dim(2));
    out.scale_offsets.push_back(offset);
    offset += m.dim(1) * m.dim(2);
    parts.push_back(map_to_tokens(m));
  }
  out.data = parts.size() == 1 ? parts[0] : concat(parts, 1);
  return out;
}

Var TokenMatrix::level_map(size_t i) const {
  if (i >= levels()) throw ArgumentError("token level " + std::to_string(i) + " out of range");
  const auto [h, w] = scale_shapes[i];
  const int64_t begin = scale_offsets[i];
  Var rows = levels() == 1 ? data : slice(data, 1, begin, begin + h * w);
  return tokens_to_map(rows, h, w);
}

std::vector<Var> TokenMatrix::level_maps() const {
  std::vector<Var> maps;
  for (size_t i = 0; i < levels(); ++i) maps.push_back(level_map(i));
  return maps;
}

TokenMatrix TokenMatrix::with_data(Var values) const {
  TokenMatrix out = *this;
  out.data = std::move(values);
  out.validate();
  return out;
}

void TokenMatrix::validate() const {
  if (!data.defined() || data.value().rank() != 3) throw ArgumentError("token data must be (B, T, D)");
  if (scale_shapes.empty() || scale_shapes.size() != scale_offsets.size())
    throw ArgumentError("token matrix is missing scale metadata");
  int64_t expected = 0;
  for (size_t i = 0; i < scale_shapes.size(); ++i) {
    if (scale_offsets[i] != expected) throw ArgumentError("token scale offsets are inconsistent");
    const auto [h, w] = scale_shapes[i];
    if (h < 1 || w < 1) throw ArgumentError("token scale shapes must be positive");
    expected += h * w;
  }
  if (expected != tokens())
    throw ArgumentError("token scales cover " + std::to_string(expected) + " rows but data has " +
                        std::to_string(tokens()));
}

bool TokenMatrix::same_geometry(const TokenMatrix& other) const {
  return data.shape() == other.data.shape() && scale_shapes == other.scale_shapes &&
         scale_offsets == other.scale_offsets;
}

}  // namespace mmsam
