// Command-line front end: train | eval | predict | split-assist | synth.

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "CLI11.hpp"
#include "mmsam/commands.hpp"
#include "mmsam/data.hpp"
#include "mmsam/error.hpp"
#include "mmsam/trainer.hpp"

namespace fs = std::filesystem;
using namespace mmsam;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int64_t seed = -1;
  std::string device;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON run configuration");
  app->add_option("--set", c.sets, "Override, key=value (repeatable)");
  app->add_option("--seed", c.seed, "Overrides training.seed");
  app->add_option("--device", c.device, "Compute device (cpu)");
}

RunConfig resolve(const Common& c) {
  std::vector<std::string> sets = c.sets;
  if (c.seed >= 0) sets.push_back("training.seed=" + std::to_string(c.seed));
  if (!c.device.empty()) sets.push_back("runtime.device=\"" + c.device + "\"");
  RunConfig cfg = RunConfig::load(c.config, sets);
  apply_runtime(cfg.runtime);
  return cfg;
}

std::string default_run_dir(const Common& c, const RunConfig& cfg) {
  if (!cfg.output.run_dir.empty()) return cfg.output.run_dir;
  const char* root = std::getenv("MMSAM_RUN_ROOT");
  const std::string stem = c.config.empty() ? "default" : fs::path(c.config).stem().string();
  return (fs::path(root ? root : "runs") / (stem + "-seed" + std::to_string(cfg.training.seed))).string();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal SAM-adapter segmentation"};
  app.require_subcommand(1);

  Common train_c, eval_c, predict_c, assist_c;
  std::string resume, run_dir;
  auto* train = app.add_subcommand("train", "Train a model");
  add_common(train, train_c);
  train->add_option("--run-dir", run_dir, "Output directory (default $MMSAM_RUN_ROOT/<config>-seed<N>)");
  train->add_option("--resume", resume, "Checkpoint to continue from");

  std::string checkpoint, split = "test", manifest, out;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a split");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--split", split, "Dataset split");
  eval->add_option("--manifest", manifest, "Easy/hard manifest");
  eval->add_option("--out", out, "Report directory")->required();

  std::string input;
  auto* predict = app.add_subcommand("predict", "Write label maps for a folder of inputs");
  add_common(predict, predict_c);
  predict->add_option("--checkpoint", checkpoint)->required();
  predict->add_option("--input", input, "Folder with rgb/ and aux/")->required();
  predict->add_option("--out", out, "Output folder")->required();

  auto* assist = app.add_subcommand("split-assist", "Rank samples by RGB-only difficulty");
  add_common(assist, assist_c);
  assist->add_option("--checkpoint", checkpoint, "RGB-only checkpoint")->required();
  assist->add_option("--split", split, "Dataset split");
  assist->add_option("--out", out, "Candidate list (JSON)")->required();

  SynthSpec spec;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic dataset");
  synth->add_option("--out", out, "Dataset root")->required();
  synth->add_option("--n", spec.n, "Samples per train/test split");
  synth->add_option("--size", spec.size, "Image side");
  synth->add_option("--classes", spec.num_classes, "Number of classes");
  synth->add_option("--hard-fraction", spec.hard_fraction, "Fraction of darkened samples");
  synth->add_option("--seed", spec.seed, "Generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const RunConfig cfg = resolve(train_c);
      const std::string dir = run_dir.empty() ? default_run_dir(train_c, cfg) : run_dir;
      RunLock lock(dir);
      auto model = build_model(cfg);
      const TrainResult r = mmsam::train(cfg, *model, dir, resume);
      std::cout << "run dir: " << dir << "\nsteps: " << r.steps << "\nfinal loss: " << r.final_loss
                << "\nbest val mIoU: " << r.best_val_miou << "\n";
    } else if (*eval) {
      const RunConfig cfg = resolve(eval_c);
      RunLock lock(out);
      const SplitReport r = run_eval(cfg, checkpoint, split, manifest, out);
      std::cout << r.to_json().dump(2) << "\n";
    } else if (*predict) {
      const RunConfig cfg = resolve(predict_c);
      RunLock lock(out);
      const PredictSummary s = run_predict(cfg, checkpoint, input, out);
      std::cout << "wrote " << s.written << " predictions, " << s.failures.size() << " failures\n";
      if (s.written == 0) return 3;
    } else if (*assist) {
      const RunConfig cfg = resolve(assist_c);
      const auto ranked = run_split_assist(cfg, checkpoint, split, out);
      std::cout << "ranked " << ranked.size() << " samples into " << out << "\n";
    } else if (*synth) {
      for (const auto& r : generate_synthetic(spec, out))
        std::cout << r.split << ": " << r.count << " samples, " << r.hard_ids.size()
                  << " hard, aux oracle accuracy " << r.aux_oracle_accuracy << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const LoadError& e) {
    std::cerr << "load error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
