#pragma once

#include <memory>
#include <vector>

#include "mmsam/nn.hpp"
#include "mmsam/tokens.hpp"

namespace mmsam {

struct HeadConfig {
  int64_t num_classes = 25;
  int64_t decoder_dim = 512;
  int64_t ignore_index = 255;

  void validate() const;
};

/// Stride-8/16/32 maps of the adapter output tokens.
std::vector<Var> refine_tokens(const TokenMatrix& f_mm);

/// Linear + batch norm + ReLU over the channel axis.
class LinearBnRelu : public Module {
 public:
  LinearBnRelu(Initializer& init, int64_t in, int64_t out);
  Var operator()(const Var& x) { return relu(bn(linear(x))); }

  Linear linear;
  BatchNorm bn;
};

class SegHead : public Module {
 public:
  SegHead(Initializer& init, int64_t dim, const HeadConfig& cfg);

  const HeadConfig& config() const { return cfg_; }
  /// Mixed maps at strides 4/8/16/32: f1 + upsampled stride-8 map, then
  /// every level plus the backbone map resized to its resolution.
  std::vector<Var> head_preprocess(const Var& f1, const std::vector<Var>& maps, const Var& f_sam_map) const;
  /// Logits (B, out_h, out_w, num_classes).
  Var decode(const std::vector<Var>& mixed, int64_t out_h, int64_t out_w);

  ConvTranspose2d up;
  std::vector<std::unique_ptr<LinearBnRelu>> scale_mlps;
  LinearBnRelu fuse;
  Linear classifier;

 private:
  HeadConfig cfg_;
};

}  // namespace mmsam
