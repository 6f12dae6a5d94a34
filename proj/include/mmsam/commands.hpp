#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmsam/config.hpp"
#include "mmsam/evaluation.hpp"

namespace mmsam {

/// Palette color of a class id; distinct for every id in 0..255.
std::array<uint16_t, 3> palette_color(int64_t class_id);

/// Scores `checkpoint` on `split` and writes <out_dir>/report.json. An empty
/// `manifest_path` falls back to data.manifest; with neither only "all" is
/// reported.
SplitReport run_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& split,
                     const std::string& manifest_path, const std::string& out_dir);

struct PredictSummary {
  int64_t written = 0;
  std::vector<std::string> failures;
};

/// Predicts every <input_dir>/rgb/<id>.png (with aux/<id>.png) and writes
/// <out_dir>/raw/<id>.png and <out_dir>/color/<id>.png. Unreadable inputs
/// are reported in `failures`.
PredictSummary run_predict(const RunConfig& cfg, const std::string& checkpoint, const std::string& input_dir,
                           const std::string& out_dir);

/// Ranks the samples of `split` by the per-sample mIoU of an RGB-only model
/// and writes the list to `out_path` as JSON.
std::vector<HardCandidate> run_split_assist(const RunConfig& cfg, const std::string& checkpoint,
                                            const std::string& split, const std::string& out_path);

}  // namespace mmsam
