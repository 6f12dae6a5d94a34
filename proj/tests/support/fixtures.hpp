#pragma once

#include <filesystem>
#include <string>

#include "mmsam/config.hpp"
#include "mmsam/data.hpp"

namespace mmsam::testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mmsam_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Small synthetic dataset at the toy resolution, generated once per process.
inline std::string tiny_dataset() {
  static const std::string root = [] {
    const auto p = scratch_dir("tiny_dataset");
    SynthSpec spec;
    spec.n = 6;
    spec.size = 64;
    spec.hard_fraction = 0.5;
    spec.seed = 3;
    generate_synthetic(spec, p.string());
    return p.string();
  }();
  return root;
}

/// Toy concat model on the tiny dataset, two epochs of one step each.
inline RunConfig tiny_run_config() {
  return RunConfig::load(std::string(MMSAM_SOURCE_DIR) + "/configs/synthetic_mm.json",
                         {"data.root=" + tiny_dataset(), "training.epochs=2", "training.schedule.warmup_epochs=1",
                          "training.micro_batch=3", "training.accumulation=2"});
}

}  // namespace mmsam::testing
