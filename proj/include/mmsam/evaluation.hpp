#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mmsam/data.hpp"
#include "mmsam/manifest.hpp"

namespace mmsam {

/// counts[gt * num_classes + pred].
struct ConfusionMatrix {
  int64_t num_classes = 0;
  int64_t ignore_index = 255;
  std::vector<int64_t> counts;

  ConfusionMatrix() = default;
  ConfusionMatrix(int64_t classes, int64_t ignore = 255)
      : num_classes(classes), ignore_index(ignore), counts(static_cast<size_t>(classes * classes), 0) {}

  int64_t at(int64_t gt, int64_t pred) const { return counts[static_cast<size_t>(gt * num_classes + pred)]; }
  int64_t total() const;
  void add(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix& other) const = default;
};

/// Adds every non-ignored pixel; labels outside [0, num_classes) raise a
/// DataError naming `sample_id`.
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt, const std::string& sample_id = "");

struct MiouResult {
  double mean = 0.0;
  /// NaN for classes absent from both gt and prediction.
  std::vector<double> per_class;
};

/// Throws MetricError when the matrix is empty.
MiouResult miou(const ConfusionMatrix& cm);

/// Mean IoU over the classes present in `gt` only.
double sample_miou(const LabelMap& pred, const LabelMap& gt, int64_t num_classes, int64_t ignore_index);

struct SplitReport {
  ConfusionMatrix all, easy, hard, unlisted;
  int64_t n_all = 0, n_easy = 0, n_hard = 0, n_unlisted = 0;
  bool has_manifest = false;

  nlohmann::json to_json(const std::vector<std::string>& class_names = {}) const;
};

using Predictor = std::function<LabelMap(const SampleRecord&)>;

/// Runs `predict` over every sample and accumulates all/easy/hard/unlisted
/// matrices. Manifest ids absent from the dataset raise a DataError.
SplitReport evaluate_split(const Predictor& predict, const Dataset& dataset, const SplitManifest* manifest);

/// Same, for pre-computed predictions keyed by sample order.
SplitReport evaluate_predictions(const std::vector<std::string>& ids, const std::vector<LabelMap>& preds,
                                 const std::vector<LabelMap>& gts, int64_t num_classes, int64_t ignore_index,
                                 const SplitManifest* manifest);

struct HardCandidate {
  std::string id;
  double miou = 0.0;
  double deficit = 0.0;
};

/// Ascending per-sample mIoU; ties by id.
std::vector<HardCandidate> rank_hard_candidates(const std::vector<std::string>& ids,
                                                const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                                                int64_t num_classes, int64_t ignore_index);

}  // namespace mmsam
