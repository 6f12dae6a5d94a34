#pragma once

#include <array>
#include <utility>
#include <vector>

#include "mmsam/data.hpp"
#include "mmsam/model.hpp"

namespace mmsam {

/// Model-input normalization. RGB uses per-channel mean/std on 0..255
/// values; aux is min-max scaled from [aux_min, aux_max] to [0, 1] and then
/// standardized.
struct NormConfig {
  std::array<double, 3> rgb_mean{123.675, 116.28, 103.53};
  std::array<double, 3> rgb_std{58.395, 57.12, 57.375};
  double aux_min = 0.0;
  double aux_max = 255.0;
  double aux_mean = 0.5;
  double aux_std = 0.5;

  void validate() const;
};

/// Stacks normalized samples into (B, H, W, 3) and (B, H, W, C_aux).
std::pair<Var, Var> make_batch(const std::vector<const SampleRecord*>& samples, const NormConfig& norm);

/// Argmax labels of one sample. Inputs of another size are resized to the
/// model resolution and the logits back to the sample size.
LabelMap predict_labels(MMSamModel& model, const SampleRecord& sample, const NormConfig& norm);

}  // namespace mmsam
