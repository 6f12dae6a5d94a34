#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mmsam/commands.hpp"
#include "mmsam/error.hpp"
#include "mmsam/inference.hpp"
#include "mmsam/trainer.hpp"
#include "support/fixtures.hpp"

using namespace mmsam;
using namespace mmsam::testing;
namespace fs = std::filesystem;

namespace {

std::string trained_checkpoint(const RunConfig& cfg, const std::string& name) {
  const fs::path dir = scratch_dir(name);
  RunConfig c = cfg;
  c.training.epochs = 2;
  c.training.max_steps = 1;
  auto model = build_model(c);
  return train(c, *model, dir.string()).last_checkpoint;
}

}  // namespace

TEST(Commands, PaletteIsInjective) {
  std::set<std::array<uint16_t, 3>> seen;
  for (int64_t c = 0; c < 256; ++c) seen.insert(palette_color(c));
  EXPECT_EQ(seen.size(), 256u);
  EXPECT_EQ(palette_color(0), (std::array<uint16_t, 3>{0, 0, 0}));
}

TEST(Commands, EvalAndPredictAgree) {
  const RunConfig cfg = tiny_run_config();
  const std::string ckpt = trained_checkpoint(cfg, "cmd_eval");
  const fs::path out = scratch_dir("cmd_eval_out");
  const std::string manifest = cfg.data.root + "/test/manifest.json";
  const SplitReport r = run_eval(cfg, ckpt, "test", manifest, out.string());
  EXPECT_TRUE(r.has_manifest);
  EXPECT_EQ(r.n_easy + r.n_hard, r.n_all);
  ASSERT_TRUE(fs::exists(out / "report.json"));
  const auto j = nlohmann::json::parse(std::ifstream(out / "report.json"));
  EXPECT_EQ(j["all"]["miou"].get<double>(), miou(r.all).mean);
  EXPECT_TRUE(j.contains("hard"));

  const SplitReport plain = run_eval(cfg, ckpt, "test", "", scratch_dir("cmd_eval_plain").string());
  EXPECT_FALSE(plain.has_manifest);
  EXPECT_EQ(plain.all, r.all);

  const fs::path pred = scratch_dir("cmd_predict");
  const PredictSummary s = run_predict(cfg, ckpt, cfg.data.root + "/test", pred.string());
  EXPECT_EQ(s.written, 6);
  EXPECT_TRUE(s.failures.empty());
  auto model = build_model(cfg);
  load_checkpoint(ckpt, *model);
  const Dataset test(cfg.data.root, "test");
  ConfusionMatrix cm(cfg.model.head.num_classes);
  for (const auto& id : test.ids()) {
    const Image raw = read_png((pred / "raw" / (id + ".png")).string());
    LabelMap l(raw.height, raw.width);
    for (size_t i = 0; i < l.data.size(); ++i) l.data[i] = raw.pixels[i];
    EXPECT_EQ(l.data, predict_labels(*model, test.load(id), cfg.data.norm).data) << id;
    accumulate(cm, l, test.load(id).label, id);
    EXPECT_TRUE(fs::exists(pred / "color" / (id + ".png")));
  }
  EXPECT_EQ(cm, r.all);
}

TEST(Commands, PredictReportsUnreadableInput) {
  const RunConfig cfg = tiny_run_config();
  const std::string ckpt = trained_checkpoint(cfg, "cmd_bad");
  const fs::path in = scratch_dir("cmd_bad_in");
  fs::create_directories(in / "rgb");
  fs::create_directories(in / "aux");
  std::ofstream(in / "rgb" / "x.png") << "garbage";
  std::ofstream(in / "aux" / "x.png") << "garbage";
  const PredictSummary s = run_predict(cfg, ckpt, in.string(), scratch_dir("cmd_bad_out").string());
  EXPECT_EQ(s.written, 0);
  ASSERT_EQ(s.failures.size(), 1u);
}

TEST(Commands, SplitAssistNeedsRgbOnlyAndRanksAscending) {
  RunConfig cfg = tiny_run_config();
  EXPECT_THROW(run_split_assist(cfg, "unused", "test", "unused"), ConfigError);
  cfg.model.fusion.kind = FusionKind::rgb_only;
  const std::string ckpt = trained_checkpoint(cfg, "cmd_split");
  const fs::path out = scratch_dir("cmd_split_out") / "candidates.json";
  const auto ranked = run_split_assist(cfg, ckpt, "test", out.string());
  ASSERT_EQ(ranked.size(), 6u);
  for (size_t i = 1; i < ranked.size(); ++i) EXPECT_LE(ranked[i - 1].miou, ranked[i].miou);
  const auto j = nlohmann::json::parse(std::ifstream(out));
  EXPECT_EQ(j["candidates"].size(), 6u);
  EXPECT_EQ(j["candidates"][0]["id"], ranked[0].id);
}
