#pragma once

#include <cstdint>

namespace mmsam {

struct ScheduleConfig {
  double eta_base = 2e-4;
  double eta_min = 0.0;
  double warmup_epochs = 10;
  double warmup_ratio = 0.1;
  double alpha = 0.9;
  /// P_max; the trainer sets it from training.epochs.
  double max_epochs = 100;
  double layer_decay = 0.9;
  /// Multiplier for modules outside the backbone.
  double new_module_boost = 1.0;
  double weight_decay = 1e-2;

  void validate() const;
};

/// Warm-up then polynomial decay; p in epochs, fractional values allowed.
///   p <= N_w: eta_base * wr^(1 - p / N_w)
///   p >  N_w: (eta_base - eta_min) * (1 - p / P_max)^alpha + eta_min
double lr_at(double p, const ScheduleConfig& cfg);

/// gamma^(L - layer - 1).
double layerwise_lr(int64_t layer, int64_t num_layers, const ScheduleConfig& cfg);

}  // namespace mmsam
