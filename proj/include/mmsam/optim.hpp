#pragma once

#include <map>
#include <string>
#include <vector>

#include "mmsam/checkpoint.hpp"
#include "mmsam/model.hpp"
#include "mmsam/schedule.hpp"

namespace mmsam {

struct ParamGroup {
  std::string name;
  std::vector<ParamRef> params;
  double lr_mult = 1.0;
  double weight_decay = 0.0;
};

/// Layer index of a backbone parameter name relative to the backbone
/// ("blocks.7.attn.qkv.weight" -> 7; embeddings -> 0); -1 outside it.
int64_t backbone_layer_of(const std::string& name);

/// Partitions every trainable parameter of `model` into groups keyed by
/// (learning-rate multiplier, weight decay). Throws TrainingError when a
/// parameter would land in two groups.
std::vector<ParamGroup> build_param_groups(const MMSamModel& model, const ScheduleConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(std::vector<ParamGroup> groups, AdamWConfig cfg = {});

  /// One update with base rate `lr`; parameters without a gradient are skipped.
  void step(double lr);
  int64_t steps() const { return step_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }

  void save(Archive& archive) const;
  void load(const Archive& archive);

 private:
  struct Moments {
    Tensor m, v;
  };
  std::vector<ParamGroup> groups_;
  AdamWConfig cfg_;
  std::map<std::string, Moments> state_;
  int64_t step_ = 0;
};

}  // namespace mmsam
