#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mmsam/augment.hpp"
#include "mmsam/inference.hpp"
#include "mmsam/loss.hpp"
#include "mmsam/model.hpp"
#include "mmsam/schedule.hpp"

namespace mmsam {

struct TrainingConfig {
  ScheduleConfig schedule;
  OhemConfig ohem;
  AugmentConfig augment;
  bool augment_enabled = true;
  uint64_t seed = 0;
  int64_t epochs = 100;
  int64_t micro_batch = 1;
  int64_t accumulation = 8;
  /// Batch norm uses running statistics during training.
  bool freeze_batchnorm = false;
  int64_t eval_every = 1;
  /// Stop after this many optimizer steps (0 = no limit).
  int64_t max_steps = 0;
};

struct DataConfig {
  std::string root;
  std::string train_split = "train";
  std::string val_split = "val";
  std::string test_split = "test";
  /// Easy/hard manifest used by eval when none is passed explicitly.
  std::string manifest;
  NormConfig norm;
};

struct OutputConfig {
  std::string run_dir;
  std::string checkpoint_dtype = "f32";
};

struct RuntimeConfig {
  std::string device = "cpu";
  /// 0 keeps the OpenMP default.
  int64_t threads = 0;
  /// "parallel" or "serial" kernels.
  std::string backend = "parallel";
};

struct RunConfig {
  ModelConfig model = ModelConfig::full_scale();
  TrainingConfig training;
  DataConfig data;
  OutputConfig output;
  RuntimeConfig runtime;

  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys and type errors raise ConfigError naming the field path.
  static RunConfig from_json(const nlohmann::json& j);
  /// Reads `path` (may be empty for defaults) and applies "a.b=value"
  /// overrides in order.
  static RunConfig load(const std::string& path, const std::vector<std::string>& overrides = {});
  /// The OHEM settings with min_kept resolved against the crop size.
  OhemConfig resolved_ohem() const;
};

/// Sets `dotted` in `j`, parsing `value` as JSON when possible and as a
/// string otherwise.
void apply_override(nlohmann::json& j, const std::string& assignment);

}  // namespace mmsam
