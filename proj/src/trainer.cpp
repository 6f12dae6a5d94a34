#include "mmsam/trainer.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "mmsam/augment.hpp"
#include "mmsam/error.hpp"
#include "mmsam/evaluation.hpp"
#include "mmsam/inference.hpp"
#include "mmsam/kernels/kernels.hpp"
#include "mmsam/loss.hpp"
#include "mmsam/schedule.hpp"

namespace mmsam {

namespace fs = std::filesystem;
using nlohmann::json;

void apply_runtime(const RuntimeConfig& runtime) {
  if (runtime.threads > 0) kernels::set_num_threads(static_cast<int>(runtime.threads));
  kernels::set_backend(runtime.backend == "serial" ? kernels::Backend::serial : kernels::Backend::parallel);
}

std::unique_ptr<MMSamModel> build_model(const RunConfig& cfg) {
  auto model = std::make_unique<MMSamModel>(cfg.model, cfg.training.seed);
  if (!cfg.model.backbone.pretrained.empty())
    load_pretrained(model->backbone, cfg.model.backbone.pretrained, cfg.model.backbone.allow_pos_resize);
  model->apply_freeze();
  return model;
}

RunLock::RunLock(const std::string& run_dir) : path_((fs::path(run_dir) / ".lock").string()) {
  fs::create_directories(run_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) throw IoError("run directory " + run_dir + " is locked by another process (" + path_ + ")");
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

Trainer::Trainer(const RunConfig& cfg, MMSamModel& model)
    : cfg_(cfg),
      model_(model),
      ohem_(cfg.resolved_ohem()),
      optimizer_(build_param_groups(model, cfg.training.schedule)) {}

void Trainer::set_train_mode() {
  model_.set_training(true);
  if (cfg_.training.freeze_batchnorm)
    model_.for_each_module([](Module& m) {
      if (dynamic_cast<BatchNorm*>(&m)) m.set_training(false);
    });
}

double Trainer::step(const std::vector<std::vector<const SampleRecord*>>& micro_batches, double lr) {
  set_train_mode();
  model_.zero_grad();
  size_t total = 0;
  for (const auto& mb : micro_batches) total += mb.size();
  if (total == 0) throw ArgumentError("training step without samples");
  double batch_loss = 0.0;
  for (const auto& mb : micro_batches) {
    if (mb.empty()) continue;
    auto [rgb, aux] = make_batch(mb, cfg_.data.norm);
    std::vector<LabelMap> labels;
    for (const SampleRecord* s : mb) labels.push_back(s->label);
    const Var logits = model_.forward(rgb, aux);
    const Var loss = ohem_cross_entropy(logits, labels, ohem_);
    const double weight = static_cast<double>(mb.size()) / static_cast<double>(total);
    const double value = loss.value()[0];
    batch_loss += weight * value;
    if (!std::isfinite(value)) return value;
    backward(scale(loss, weight));
  }
  optimizer_.step(lr);
  return batch_loss;
}

void save_checkpoint(const std::string& path, const RunConfig& cfg, const MMSamModel& model, const AdamW* optimizer,
                     const json& metadata) {
  const ArrayDtype dtype = cfg.output.checkpoint_dtype == "f64" ? ArrayDtype::f64 : ArrayDtype::f32;
  Archive archive;
  export_module(model, archive, "", dtype);
  if (optimizer) optimizer->save(archive);
  json meta = metadata;
  meta["config"] = cfg.to_json();
  for (auto& [k, v] : archive.metadata.items()) meta[k] = v;
  archive.metadata = meta;
  write_archive(archive, path);
}

Archive load_checkpoint(const std::string& path, MMSamModel& model) {
  Archive archive = read_archive(path);
  import_module(model, archive, "", true);
  return archive;
}

double validation_miou(MMSamModel& model, const Dataset& dataset, const NormConfig& norm) {
  ConfusionMatrix cm(dataset.info().num_classes, dataset.info().ignore_index);
  for (size_t i = 0; i < dataset.size(); ++i) {
    const SampleRecord s = dataset.load(i);
    accumulate(cm, predict_labels(model, s, norm), s.label, s.id);
  }
  return miou(cm).mean;
}

namespace {

SampleRecord fit_to_crop(SampleRecord s, int64_t crop) {
  if (s.height() == crop && s.width() == crop) return s;
  s.rgb = resize_raster(s.rgb, crop, crop);
  s.aux = resize_raster(s.aux, crop, crop);
  s.label = resize_labels_nearest(s.label, crop, crop);
  return s;
}

bool has_nonfinite(const Tensor& t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) return true;
  return false;
}

[[noreturn]] void abort_nonfinite(const std::string& run_dir, const RunConfig& cfg, const MMSamModel& model,
                                  int64_t epoch, int64_t step, double lr, double loss,
                                  const std::vector<std::string>& ids) {
  json diag{{"epoch", epoch}, {"step", step}, {"lr", lr}, {"loss", std::isnan(loss) ? "nan" : "inf"},
            {"samples", ids}};
  json bad = json::array();
  for (const ParamRef& p : model.named_parameters())
    if (has_nonfinite(p.var->value()) || (p.var->has_grad() && has_nonfinite(p.var->grad()))) bad.push_back(p.name);
  diag["nonfinite_parameters"] = bad;
  const std::string dir = (fs::path(run_dir) / "diagnostic").string();
  fs::create_directories(dir);
  std::ofstream(fs::path(dir) / "diagnostic.json") << diag.dump(2) << "\n";
  save_checkpoint((fs::path(dir) / "model.mmsam").string(), cfg, model, nullptr, diag);
  throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                      "; diagnostic snapshot written to " + dir);
}

}  // namespace

TrainResult train(const RunConfig& cfg, MMSamModel& model, const std::string& run_dir, const std::string& resume) {
  cfg.validate();
  const auto& t = cfg.training;
  if (cfg.data.root.empty()) throw ConfigError("data.root", "no dataset root given");
  const Dataset train_set(cfg.data.root, cfg.data.train_split);
  if (train_set.size() == 0) throw DataError("training split '" + cfg.data.train_split + "' is empty");
  if (train_set.info().num_classes != cfg.model.head.num_classes)
    throw ConfigError("model.head.num_classes", "dataset has " + std::to_string(train_set.info().num_classes) +
                                                    " classes");
  std::unique_ptr<Dataset> val_set;
  if (!cfg.data.val_split.empty() && fs::exists(fs::path(cfg.data.root) / cfg.data.val_split))
    val_set = std::make_unique<Dataset>(cfg.data.root, cfg.data.val_split);

  fs::create_directories(fs::path(run_dir) / "checkpoints");
  std::ofstream(fs::path(run_dir) / "config.json") << cfg.to_json().dump(2) << "\n";

  Trainer trainer(cfg, model);
  TrainResult result;
  result.best_val_miou = std::nan("");
  result.last_checkpoint = (fs::path(run_dir) / "checkpoints" / "last.mmsam").string();
  result.best_checkpoint = (fs::path(run_dir) / "checkpoints" / "best.mmsam").string();

  int64_t start_epoch = 0;
  std::ios::openmode log_mode = std::ios::trunc;
  if (!resume.empty()) {
    const Archive archive = load_checkpoint(resume, model);
    trainer.optimizer().load(archive);
    start_epoch = archive.metadata.value("epoch", int64_t{-1}) + 1;
    result.steps = archive.metadata.value("step", int64_t{0});
    if (archive.metadata.contains("best_val_miou") && archive.metadata["best_val_miou"].is_number())
      result.best_val_miou = archive.metadata["best_val_miou"].get<double>();
    log_mode = std::ios::app;
  }
  std::ofstream log(fs::path(run_dir) / "metrics.jsonl", log_mode);
  if (!log) throw IoError("cannot open metrics log in " + run_dir);

  const int64_t n = static_cast<int64_t>(train_set.size());
  const int64_t per_step = t.micro_batch * t.accumulation;
  const int64_t steps_per_epoch = (n + per_step - 1) / per_step;
  const int64_t crop = t.augment.crop_size;

  for (int64_t epoch = start_epoch; epoch < t.epochs; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(sample_seed(t.seed, epoch, -1));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    int64_t epoch_steps = 0;
    double lr = 0.0;
    bool stop = false;
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      const int64_t begin = s * per_step;
      const int64_t end = std::min(n, begin + per_step);
      std::vector<SampleRecord> samples;
      std::vector<std::string> ids;
      for (int64_t k = begin; k < end; ++k) {
        const int64_t index = order[static_cast<size_t>(k)];
        SampleRecord raw = train_set.load(static_cast<size_t>(index));
        ids.push_back(raw.id);
        samples.push_back(t.augment_enabled
                              ? augment(raw, t.augment, sample_seed(t.seed, epoch, index), t.ohem.ignore_index)
                              : fit_to_crop(std::move(raw), crop));
      }
      std::vector<std::vector<const SampleRecord*>> micro;
      for (size_t k = 0; k < samples.size(); ++k) {
        if (k % static_cast<size_t>(t.micro_batch) == 0) micro.emplace_back();
        micro.back().push_back(&samples[k]);
      }
      const double p = static_cast<double>(epoch) + static_cast<double>(s) / static_cast<double>(steps_per_epoch);
      lr = lr_at(p, t.schedule);
      const double loss = trainer.step(micro, lr);
      if (!std::isfinite(loss)) abort_nonfinite(run_dir, cfg, model, epoch, result.steps, lr, loss, ids);
      ++result.steps;
      ++epoch_steps;
      epoch_loss += loss;
      result.final_loss = loss;
      log << json{{"epoch", epoch}, {"step", result.steps}, {"lr", lr}, {"loss", loss}}.dump() << "\n";
      if (t.max_steps > 0 && result.steps >= t.max_steps) {
        stop = true;
        break;
      }
    }
    log.flush();
    result.epochs = epoch + 1;

    const bool last = stop || epoch + 1 == t.epochs;
    json record{{"epoch", epoch}, {"step", result.steps}, {"lr", lr},
                {"loss", epoch_steps > 0 ? epoch_loss / static_cast<double>(epoch_steps) : 0.0}};
    json meta{{"epoch", epoch}, {"step", result.steps}, {"seed", t.seed},
              {"rng", {{"scheme", "counter"}, {"seed", t.seed}, {"next_epoch", epoch + 1}}}};
    if (val_set && t.eval_every > 0 && ((epoch + 1) % t.eval_every == 0 || last)) {
      const double v = validation_miou(model, *val_set, cfg.data.norm);
      record["val_miou"] = v;
      meta["val_miou"] = v;
      if (std::isnan(result.best_val_miou) || v > result.best_val_miou) {
        result.best_val_miou = v;
        meta["best_val_miou"] = v;
        save_checkpoint(result.best_checkpoint, cfg, model, &trainer.optimizer(), meta);
      }
    }
    if (!std::isnan(result.best_val_miou)) meta["best_val_miou"] = result.best_val_miou;
    log << record.dump() << "\n";
    log.flush();
    save_checkpoint(result.last_checkpoint, cfg, model, &trainer.optimizer(), meta);
    if (stop) break;
  }
  if (!val_set || std::isnan(result.best_val_miou)) {
    std::error_code ec;
    fs::copy_file(result.last_checkpoint, result.best_checkpoint, fs::copy_options::overwrite_existing, ec);
  }
  return result;
}

}  // namespace mmsam
