#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmsam/error.hpp"
#include "mmsam/evaluation.hpp"
#include "support/oracles.hpp"

using namespace mmsam;
using namespace mmsam::testing;

namespace {

LabelMap random_map(std::mt19937_64& rng, int64_t h, int64_t w, int32_t classes, bool with_ignore) {
  std::uniform_int_distribution<int32_t> d(0, with_ignore ? classes : classes - 1);
  LabelMap m(h, w);
  for (auto& v : m.data) {
    v = d(rng);
    if (v == classes) v = 255;
  }
  return m;
}

}  // namespace

TEST(Miou, MatchesRationalEnumeration) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> dim(1, 6), cls(2, 5), count(1, 4);
  for (int t = 0; t < 60; ++t) {
    const int32_t K = cls(rng);
    std::vector<LabelMap> preds, gts;
    ConfusionMatrix cm(K);
    for (int n = count(rng); n > 0; --n) {
      const int h = dim(rng), w = dim(rng);
      gts.push_back(random_map(rng, h, w, K, true));
      preds.push_back(random_map(rng, h, w, K, false));
      accumulate(cm, preds.back(), gts.back());
    }
    const RationalIou want = iou_oracle(preds, gts, K, 255);
    if (cm.total() == 0) {
      EXPECT_THROW(miou(cm), MetricError);
      continue;
    }
    const MiouResult got = miou(cm);
    for (int32_t c = 0; c < K; ++c) {
      const size_t i = static_cast<size_t>(c);
      if (want.den[i] == 0)
        EXPECT_TRUE(std::isnan(got.per_class[i]));
      else
        EXPECT_EQ(got.per_class[i], static_cast<double>(want.num[i]) / static_cast<double>(want.den[i]));
    }
    // Summation order may differ from the long double reference by rounding only.
    EXPECT_LE(std::fabs(got.mean - static_cast<double>(want.mean())), 4 * K * std::ldexp(1.0, -53)) << t;
  }
}

TEST(Miou, HandCase) {
  LabelMap gt(1, 4), pred(1, 4);
  gt.data = {0, 0, 1, 255};
  pred.data = {0, 1, 1, 0};
  ConfusionMatrix cm(3);
  accumulate(cm, pred, gt);
  const MiouResult r = miou(cm);
  EXPECT_EQ(r.per_class[0], 0.5);
  EXPECT_EQ(r.per_class[1], 0.5);
  EXPECT_TRUE(std::isnan(r.per_class[2]));
  EXPECT_EQ(r.mean, 0.5);
}

TEST(Miou, LabelOutOfRangeNamesSample) {
  ConfusionMatrix cm(2);
  LabelMap gt(1, 1, 3), pred(1, 1, 0);
  try {
    accumulate(cm, pred, gt, "s042");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("s042"), std::string::npos);
  }
}

TEST(SplitReport, PartitionsAreAdditive) {
  std::mt19937_64 rng(32);
  std::vector<std::string> ids{"a", "b", "c", "d", "e"};
  std::vector<LabelMap> preds, gts;
  for (size_t i = 0; i < ids.size(); ++i) {
    gts.push_back(random_map(rng, 4, 4, 3, true));
    preds.push_back(random_map(rng, 4, 4, 3, false));
  }
  SplitManifest m;
  m.easy = {"a", "c"};
  m.hard = {"b", "e"};
  const SplitReport r = evaluate_predictions(ids, preds, gts, 3, 255, &m);
  ConfusionMatrix sum = r.easy;
  sum.add(r.hard);
  sum.add(r.unlisted);
  EXPECT_EQ(sum, r.all);
  EXPECT_EQ(r.n_easy, 2);
  EXPECT_EQ(r.n_hard, 2);
  EXPECT_EQ(r.n_unlisted, 1);
  m.hard.push_back("zz");
  EXPECT_THROW(evaluate_predictions(ids, preds, gts, 3, 255, &m), DataError);
}

TEST(SplitReport, WithoutManifestOnlyAll) {
  std::mt19937_64 rng(33);
  const std::vector<LabelMap> gts{random_map(rng, 3, 3, 2, false)};
  const SplitReport r = evaluate_predictions({"x"}, gts, gts, 2, 255, nullptr);
  const auto j = r.to_json();
  EXPECT_EQ(j["all"]["miou"].get<double>(), 1.0);
  EXPECT_FALSE(r.has_manifest);
}

TEST(Manifest, RejectsOverlapAndDuplicates) {
  SplitManifest m;
  m.easy = {"a", "b"};
  m.hard = {"b"};
  EXPECT_THROW(m.validate(), DataError);
  m.hard = {"c", "c"};
  EXPECT_THROW(m.validate(), DataError);
}

TEST(HardCandidates, AscendingWithIdTieBreak) {
  LabelMap gt(1, 2), perfect(1, 2), half(1, 2);
  gt.data = {0, 1};
  perfect.data = {0, 1};
  half.data = {0, 0};
  const auto r = rank_hard_candidates({"z", "b", "a", "c"}, {half, perfect, half, perfect}, {gt, gt, gt, gt}, 2, 255);
  ASSERT_EQ(r.size(), 4u);
  EXPECT_EQ(r[0].id, "a");
  EXPECT_EQ(r[1].id, "z");
  EXPECT_EQ(r[2].id, "b");
  EXPECT_EQ(r[3].id, "c");
  EXPECT_LT(r[0].miou, r[2].miou);
  EXPECT_GE(r[0].deficit, r[2].deficit);
}
