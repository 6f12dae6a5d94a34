#include "mmsam/commands.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mmsam/data.hpp"
#include "mmsam/error.hpp"
#include "mmsam/inference.hpp"
#include "mmsam/manifest.hpp"
#include "mmsam/trainer.hpp"

namespace mmsam {

namespace fs = std::filesystem;
using nlohmann::json;

std::array<uint16_t, 3> palette_color(int64_t class_id) {
  std::array<uint16_t, 3> rgb{0, 0, 0};
  int64_t c = class_id;
  for (int bit = 7; bit >= 0 && c; --bit, c >>= 3)
    for (int k = 0; k < 3; ++k) rgb[static_cast<size_t>(k)] |= static_cast<uint16_t>(((c >> k) & 1) << bit);
  return rgb;
}

namespace {

std::unique_ptr<MMSamModel> model_from_checkpoint(const RunConfig& cfg, const std::string& checkpoint) {
  auto model = std::make_unique<MMSamModel>(cfg.model, cfg.training.seed);
  load_checkpoint(checkpoint, *model);
  model->set_training(false);
  return model;
}

void write_json(const std::string& path, const json& j) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

SplitReport run_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& split,
                     const std::string& manifest_path, const std::string& out_dir) {
  auto model = model_from_checkpoint(cfg, checkpoint);
  const Dataset dataset(cfg.data.root, split);
  const std::string mpath = manifest_path.empty() ? cfg.data.manifest : manifest_path;
  SplitManifest manifest;
  if (!mpath.empty()) manifest = SplitManifest::read(mpath);
  const Predictor predict = [&](const SampleRecord& s) { return predict_labels(*model, s, cfg.data.norm); };
  SplitReport report = evaluate_split(predict, dataset, mpath.empty() ? nullptr : &manifest);
  json j = report.to_json(dataset.info().class_names);
  j["split"] = split;
  j["checkpoint"] = checkpoint;
  if (!mpath.empty()) j["manifest"] = mpath;
  write_json((fs::path(out_dir) / "report.json").string(), j);
  return report;
}

PredictSummary run_predict(const RunConfig& cfg, const std::string& checkpoint, const std::string& input_dir,
                           const std::string& out_dir) {
  auto model = model_from_checkpoint(cfg, checkpoint);
  const fs::path in(input_dir);
  if (!fs::is_directory(in / "rgb")) throw DataError("input directory " + input_dir + " has no rgb/ folder");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(in / "rgb"))
    if (e.path().extension() == ".png") ids.push_back(e.path().stem().string());
  std::sort(ids.begin(), ids.end());
  fs::create_directories(fs::path(out_dir) / "raw");
  fs::create_directories(fs::path(out_dir) / "color");

  PredictSummary summary;
  for (const std::string& id : ids) {
    try {
      const Image rgb = read_png((in / "rgb" / (id + ".png")).string());
      const Image aux = read_png((in / "aux" / (id + ".png")).string());
      if (rgb.channels != 3) throw DataError("rgb image must have 3 channels");
      if (aux.height != rgb.height || aux.width != rgb.width) throw DataError("aux and rgb sizes differ");
      SampleRecord s;
      s.id = id;
      s.rgb = Tensor({rgb.height, rgb.width, 3});
      for (size_t i = 0; i < rgb.pixels.size(); ++i) s.rgb[static_cast<int64_t>(i)] = rgb.pixels[i];
      s.aux = Tensor({aux.height, aux.width, aux.channels});
      for (size_t i = 0; i < aux.pixels.size(); ++i) s.aux[static_cast<int64_t>(i)] = aux.pixels[i];
      s.label = LabelMap(rgb.height, rgb.width);
      const LabelMap pred = predict_labels(*model, s, cfg.data.norm);

      Image raw{pred.height, pred.width, 1, 8, {}};
      Image color{pred.height, pred.width, 3, 8, {}};
      for (int32_t v : pred.data) {
        raw.pixels.push_back(static_cast<uint16_t>(v));
        for (uint16_t ch : palette_color(v)) color.pixels.push_back(ch);
      }
      write_png((fs::path(out_dir) / "raw" / (id + ".png")).string(), raw);
      write_png((fs::path(out_dir) / "color" / (id + ".png")).string(), color);
      ++summary.written;
    } catch (const Error& e) {
      std::cerr << "warning: " << id << ": " << e.what() << "\n";
      summary.failures.push_back(id);
    }
  }
  return summary;
}

std::vector<HardCandidate> run_split_assist(const RunConfig& cfg, const std::string& checkpoint,
                                            const std::string& split, const std::string& out_path) {
  if (cfg.model.fusion.kind != FusionKind::rgb_only)
    throw ConfigError("model.fusion.kind", "split-assist needs an RGB-only model (rgb_only)");
  auto model = model_from_checkpoint(cfg, checkpoint);
  const Dataset dataset(cfg.data.root, split);
  std::vector<LabelMap> preds, gts;
  for (size_t i = 0; i < dataset.size(); ++i) {
    const SampleRecord s = dataset.load(i);
    preds.push_back(predict_labels(*model, s, cfg.data.norm));
    gts.push_back(s.label);
  }
  const auto ranked = rank_hard_candidates(dataset.ids(), preds, gts, dataset.info().num_classes,
                                           dataset.info().ignore_index);
  json list = json::array();
  for (size_t r = 0; r < ranked.size(); ++r)
    list.push_back({{"rank", r + 1}, {"id", ranked[r].id}, {"miou", ranked[r].miou}, {"deficit", ranked[r].deficit}});
  write_json(out_path, {{"split", split}, {"checkpoint", checkpoint}, {"candidates", list}});
  return ranked;
}

}  // namespace mmsam
