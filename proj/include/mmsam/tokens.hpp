#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mmsam/autograd.hpp"

namespace mmsam {

/// (B, T, D) tokens built from one or more flattened maps stacked along T.
/// Level i occupies rows [offsets[i], offsets[i] + h_i * w_i).
struct TokenMatrix {
  Var data;
  std::vector<std::pair<int64_t, int64_t>> scale_shapes;
  std::vector<int64_t> scale_offsets;

  static TokenMatrix single(const Var& map);
  static TokenMatrix stack(const std::vector<Var>& maps);

  int64_t batch() const { return data.dim(0); }
  int64_t tokens() const { return data.dim(1); }
  int64_t width() const { return data.dim(2); }
  size_t levels() const { return scale_shapes.size(); }

  /// Level `i` reshaped to its (B, h, w, D) map.
  Var level_map(size_t i) const;
  std::vector<Var> level_maps() const;
  /// Same geometry, different values.
  TokenMatrix with_data(Var values) const;
  /// Throws ArgumentError when the metadata does not describe `data`.
  void validate() const;
  bool same_geometry(const TokenMatrix& other) const;
};

}  // namespace mmsam
