#pragma once

#include <vector>

#include "mmsam/autograd.hpp"
#include "mmsam/data.hpp"

namespace mmsam {

struct OhemConfig {
  double prob_threshold = 0.7;
  /// Per image; 0 resolves to crop_area / 16.
  int64_t min_kept = 0;
  int64_t ignore_index = 255;

  void validate() const;
};

/// Per image: cross entropy averaged over the pixels whose true-class
/// probability is below the threshold, always including the min_kept
/// highest-loss valid pixels. The batch loss is the mean over images; an
/// image without valid pixels contributes zero. logits (B, H, W, K).
Var ohem_cross_entropy(const Var& logits, const std::vector<LabelMap>& labels, const OhemConfig& cfg);

/// Plain cross entropy averaged over all valid pixels of each image, then
/// over images.
Var mean_cross_entropy(const Var& logits, const std::vector<LabelMap>& labels, int64_t ignore_index);

}  // namespace mmsam
