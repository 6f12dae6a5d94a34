#pragma once

#include <cstdint>

#include "mmsam/data.hpp"

namespace mmsam {

struct AugmentConfig {
  double resize_low = 0.5;
  double resize_high = 2.0;
  double hflip_prob = 0.5;
  bool photometric = true;
  double blur_prob = 0.2;
  int64_t crop_size = 1024;

  void validate() const;
};

/// Bilinear resize of an (H, W, C) raster, half-pixel centers.
Tensor resize_raster(const Tensor& image, int64_t out_h, int64_t out_w);
LabelMap resize_labels_nearest(const LabelMap& labels, int64_t out_h, int64_t out_w);

/// Shared geometric transform (resize, crop with padding, flip) for all
/// three rasters, then photometric distortion and blur on RGB only.
SampleRecord augment(const SampleRecord& sample, const AugmentConfig& cfg, uint64_t seed, int64_t ignore_index);

/// Seed of sample `index` in `epoch`; independent of worker count.
uint64_t sample_seed(uint64_t global_seed, int64_t epoch, int64_t index);

}  // namespace mmsam
