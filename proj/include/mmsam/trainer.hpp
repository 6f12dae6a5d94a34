#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmsam/checkpoint.hpp"
#include "mmsam/config.hpp"
#include "mmsam/data.hpp"
#include "mmsam/model.hpp"
#include "mmsam/optim.hpp"

namespace mmsam {

/// Applies thread count and kernel backend.
void apply_runtime(const RuntimeConfig& runtime);

/// Builds the configured model, loads the pretrained backbone if one is
/// named, and applies the freeze switch.
std::unique_ptr<MMSamModel> build_model(const RunConfig& cfg);

/// Exclusive marker file in a run directory; released on destruction.
class RunLock {
 public:
  explicit RunLock(const std::string& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::string path_;
};

/// Optimizer state plus the update rule for one model.
class Trainer {
 public:
  Trainer(const RunConfig& cfg, MMSamModel& model);

  /// Train mode, with batch norm on running statistics when configured.
  void set_train_mode();
  /// One optimizer update from the gradients of all micro-batches. The
  /// batch loss is the sample-weighted mean of micro-batch losses. A
  /// non-finite loss is returned without touching the parameters.
  double step(const std::vector<std::vector<const SampleRecord*>>& micro_batches, double lr);

  AdamW& optimizer() { return optimizer_; }
  const OhemConfig& ohem() const { return ohem_; }

 private:
  const RunConfig& cfg_;
  MMSamModel& model_;
  OhemConfig ohem_;
  AdamW optimizer_;
};

struct TrainResult {
  int64_t steps = 0;
  int64_t epochs = 0;
  double final_loss = 0.0;
  /// NaN when no validation ran.
  double best_val_miou = 0.0;
  std::string last_checkpoint;
  std::string best_checkpoint;
};

/// Training loop writing config.json, metrics.jsonl and checkpoints/ under
/// `run_dir`. `resume` names a checkpoint to continue from.
TrainResult train(const RunConfig& cfg, MMSamModel& model, const std::string& run_dir, const std::string& resume = "");

/// Model weights, optimizer moments and loop metadata.
void save_checkpoint(const std::string& path, const RunConfig& cfg, const MMSamModel& model, const AdamW* optimizer,
                     const nlohmann::json& metadata);
/// Loads model weights; every model tensor must be present.
Archive load_checkpoint(const std::string& path, MMSamModel& model);

/// Validation mIoU of `model` on every sample of `dataset`.
double validation_miou(MMSamModel& model, const Dataset& dataset, const NormConfig& norm);

}  // namespace mmsam
