#include "mmsam/schedule.hpp"

#include <cmath>
#include <string>

#include "mmsam/error.hpp"

namespace mmsam {

void ScheduleConfig::validate() const {
  if (!(eta_base > 0.0)) throw ConfigError("training.schedule.eta_base", "must be positive");
  if (!(eta_min >= 0.0 && eta_min <= eta_base)) throw ConfigError("training.schedule.eta_min", "must be in [0, eta_base]");
  if (!(warmup_ratio > 0.0 && warmup_ratio <= 1.0)) throw ConfigError("training.schedule.warmup_ratio", "must be in (0, 1]");
  if (!(alpha > 0.0)) throw ConfigError("training.schedule.alpha", "must be positive");
  if (!(max_epochs > 0.0)) throw ConfigError("training.epochs", "must be positive");
  if (!(warmup_epochs >= 0.0 && warmup_epochs < max_epochs))
    throw ConfigError("training.schedule.warmup_epochs", "must be in [0, epochs)");
  if (!(layer_decay > 0.0 && layer_decay <= 1.0)) throw ConfigError("training.schedule.layer_decay", "must be in (0, 1]");
  if (!(new_module_boost > 0.0)) throw ConfigError("training.schedule.new_module_boost", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("training.schedule.weight_decay", "must be non-negative");
}

double lr_at(double p, const ScheduleConfig& cfg) {
  if (!(p >= 0.0 && p <= cfg.max_epochs))
    throw ArgumentError("schedule position " + std::to_string(p) + " outside [0, P_max]");
  if (cfg.warmup_epochs > 0.0 && p <= cfg.warmup_epochs)
    return cfg.eta_base * std::pow(cfg.warmup_ratio, 1.0 - p / cfg.warmup_epochs);
  return (cfg.eta_base - cfg.eta_min) * std::pow(1.0 - p / cfg.max_epochs, cfg.alpha) + cfg.eta_min;
}

double layerwise_lr(int64_t layer, int64_t num_layers, const ScheduleConfig& cfg) {
  if (layer < 0 || layer >= num_layers)
    throw ArgumentError("layer " + std::to_string(layer) + " outside [0, " + std::to_string(num_layers) + ")");
  return std::pow(cfg.layer_decay, static_cast<double>(num_layers - layer - 1));
}

}  // namespace mmsam
