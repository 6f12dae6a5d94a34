#include "mmsam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "mmsam/error.hpp"

namespace mmsam {

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t v : counts) t += v;
  return t;
}

void ConfusionMatrix::add(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw ArgumentError("confusion matrices differ in class count");
  for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt, const std::string& sample_id) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ArgumentError("prediction and ground truth of '" + sample_id + "' differ in size");
  const std::string who = sample_id.empty() ? "" : " in sample '" + sample_id + "'";
  for (size_t i = 0; i < gt.data.size(); ++i) {
    const int64_t g = gt.data[i];
    if (g == cm.ignore_index) continue;
    const int64_t p = pred.data[i];
    if (g < 0 || g >= cm.num_classes) throw DataError("ground-truth label " + std::to_string(g) + " out of range" + who);
    if (p < 0 || p >= cm.num_classes) throw DataError("predicted label " + std::to_string(p) + " out of range" + who);
    cm.counts[static_cast<size_t>(g * cm.num_classes + p)]++;
  }
}

MiouResult miou(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw MetricError("mIoU is undefined for an empty confusion matrix");
  const int64_t K = cm.num_classes;
  MiouResult r;
  r.per_class.assign(static_cast<size_t>(K), std::numeric_limits<double>::quiet_NaN());
  double acc = 0.0;
  int64_t used = 0;
  for (int64_t c = 0; c < K; ++c) {
    int64_t row = 0, col = 0;
    for (int64_t k = 0; k < K; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const int64_t inter = cm.at(c, c);
    const int64_t uni = row + col - inter;
    if (uni == 0) continue;
    r.per_class[static_cast<size_t>(c)] = static_cast<double>(inter) / static_cast<double>(uni);
    acc += r.per_class[static_cast<size_t>(c)];
    ++used;
  }
  r.mean = acc / static_cast<double>(used);
  return r;
}

double sample_miou(const LabelMap& pred, const LabelMap& gt, int64_t num_classes, int64_t ignore_index) {
  ConfusionMatrix cm(num_classes, ignore_index);
  accumulate(cm, pred, gt);
  double acc = 0.0;
  int64_t used = 0;
  for (int64_t c = 0; c < num_classes; ++c) {
    int64_t row = 0, col = 0;
    for (int64_t k = 0; k < num_classes; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    if (row == 0) continue;
    acc += static_cast<double>(cm.at(c, c)) / static_cast<double>(row + col - cm.at(c, c));
    ++used;
  }
  return used ? acc / static_cast<double>(used) : 1.0;
}

namespace {

nlohmann::json metric_json(const ConfusionMatrix& cm, int64_t samples, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["samples"] = samples;
  j["pixels"] = cm.total();
  if (cm.total() == 0) {
    j["miou"] = nullptr;
    return j;
  }
  const MiouResult r = miou(cm);
  j["miou"] = r.mean;
  nlohmann::json per = nlohmann::json::object();
  for (size_t c = 0; c < r.per_class.size(); ++c) {
    const std::string key = c < names.size() ? names[c] : std::to_string(c);
    per[key] = std::isnan(r.per_class[c]) ? nlohmann::json(nullptr) : nlohmann::json(r.per_class[c]);
  }
  j["per_class_iou"] = per;
  return j;
}

void check_manifest(const std::vector<std::string>& ids, const SplitManifest* manifest) {
  if (!manifest) return;
  manifest->validate();
  const std::set<std::string> known(ids.begin(), ids.end());
  std::string missing;
  for (const auto* list : {&manifest->easy, &manifest->hard})
    for (const auto& id : *list)
      if (!known.count(id)) missing += (missing.empty() ? "" : ", ") + id;
  if (!missing.empty()) throw DataError("split manifest lists ids absent from the dataset: " + missing);
}

}  // namespace

nlohmann::json SplitReport::to_json(const std::vector<std::string>& class_names) const {
  nlohmann::json j;
  j["all"] = metric_json(all, n_all, class_names);
  if (has_manifest) {
    j["easy"] = metric_json(easy, n_easy, class_names);
    j["hard"] = metric_json(hard, n_hard, class_names);
    j["unlisted"] = metric_json(unlisted, n_unlisted, class_names);
  }
  return j;
}

SplitReport evaluate_predictions(const std::vector<std::string>& ids, const std::vector<LabelMap>& preds,
                                 const std::vector<LabelMap>& gts, int64_t num_classes, int64_t ignore_index,
                                 const SplitManifest* manifest) {
  if (ids.size() != preds.size() || ids.size() != gts.size())
    throw ArgumentError("ids, predictions and ground truths differ in count");
  check_manifest(ids, manifest);
  SplitReport r;
  r.has_manifest = manifest != nullptr;
  r.all = r.easy = r.hard = r.unlisted = ConfusionMatrix(num_classes, ignore_index);
  for (size_t i = 0; i < ids.size(); ++i) {
    ConfusionMatrix cm(num_classes, ignore_index);
    accumulate(cm, preds[i], gts[i], ids[i]);
    r.all.add(cm);
    ++r.n_all;
    if (!manifest) continue;
    if (manifest->is_easy(ids[i])) {
      r.easy.add(cm);
      ++r.n_easy;
    } else if (manifest->is_hard(ids[i])) {
      r.hard.add(cm);
      ++r.n_hard;
    } else {
      r.unlisted.add(cm);
      ++r.n_unlisted;
    }
  }
  return r;
}

SplitReport evaluate_split(const Predictor& predict, const Dataset& dataset, const SplitManifest* manifest) {
  check_manifest(dataset.ids(), manifest);
  std::vector<LabelMap> preds, gts;
  for (size_t i = 0; i < dataset.size(); ++i) {
    SampleRecord s = dataset.load(i);
    preds.push_back(predict(s));
    gts.push_back(std::move(s.label));
  }
  return evaluate_predictions(dataset.ids(), preds, gts, dataset.info().num_classes, dataset.info().ignore_index,
                              manifest);
}

std::vector<HardCandidate> rank_hard_candidates(const std::vector<std::string>& ids,
                                                const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts,
                                                int64_t num_classes, int64_t ignore_index) {
  if (ids.size() != preds.size() || ids.size() != gts.size())
    throw ArgumentError("ids, predictions and ground truths differ in count");
  std::vector<HardCandidate> out;
  for (size_t i = 0; i < ids.size(); ++i) {
    const double m = sample_miou(preds[i], gts[i], num_classes, ignore_index);
    out.push_back({ids[i], m, 1.0 - m});
  }
  std::sort(out.begin(), out.end(), [](const HardCandidate& a, const HardCandidate& b) {
    return a.miou != b.miou ? a.miou < b.miou : a.id < b.id;
  });
  return out;
}

}  // namespace mmsam
