#include <gtest/gtest.h>

#include <random>
#include <set>

#include "mmsam/augment.hpp"
#include "mmsam/error.hpp"

using namespace mmsam;

namespace {

SampleRecord make_sample(int64_t S) {
  SynthSpec spec;
  spec.size = S;
  return render_synthetic(spec, 77, false, "s");
}

}  // namespace

TEST(Augment, SameSeedSameOutput) {
  const SampleRecord s = make_sample(32);
  AugmentConfig cfg;
  cfg.crop_size = 32;
  const SampleRecord a = augment(s, cfg, 9, 255), b = augment(s, cfg, 9, 255), c = augment(s, cfg, 10, 255);
  EXPECT_TRUE(bit_equal(a.rgb, b.rgb));
  EXPECT_TRUE(bit_equal(a.aux, b.aux));
  EXPECT_EQ(a.label.data, b.label.data);
  EXPECT_FALSE(bit_equal(a.rgb, c.rgb));
}

TEST(Augment, FlipKeepsModalitiesAligned) {
  const SampleRecord s = make_sample(32);
  AugmentConfig cfg;
  cfg.crop_size = 32;
  cfg.resize_low = cfg.resize_high = 1.0;
  cfg.photometric = false;
  cfg.blur_prob = 0.0;
  cfg.hflip_prob = 0.0;
  const SampleRecord plain = augment(s, cfg, 3, 255);
  cfg.hflip_prob = 1.0;
  const SampleRecord flipped = augment(s, cfg, 3, 255);
  EXPECT_EQ(plain.label.data, s.label.data);
  for (int64_t y = 0; y < 32; ++y)
    for (int64_t x = 0; x < 32; ++x) {
      EXPECT_EQ(flipped.label.at(y, x), plain.label.at(y, 31 - x));
      EXPECT_EQ(flipped.aux[y * 32 + x], plain.aux[y * 32 + 31 - x]);
      EXPECT_EQ(flipped.rgb[(y * 32 + x) * 3 + 1], plain.rgb[(y * 32 + 31 - x) * 3 + 1]);
    }
}

TEST(Augment, LabelsStayInOriginalSetOrIgnore) {
  const SampleRecord s = make_sample(32);
  const std::set<int32_t> orig(s.label.data.begin(), s.label.data.end());
  AugmentConfig cfg;
  cfg.crop_size = 32;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const SampleRecord a = augment(s, cfg, seed, 255);
    EXPECT_EQ(a.rgb.shape(), (Shape{32, 32, 3}));
    EXPECT_EQ(a.aux.shape(), (Shape{32, 32, 1}));
    for (int32_t v : a.label.data) EXPECT_TRUE(v == 255 || orig.count(v)) << v;
    for (int64_t i = 0; i < a.rgb.numel(); ++i) {
      EXPECT_GE(a.rgb[i], 0.0);
      EXPECT_LE(a.rgb[i], 255.0);
    }
  }
}

TEST(Augment, ShrinkPadsWithIgnore) {
  const SampleRecord s = make_sample(32);
  AugmentConfig cfg;
  cfg.crop_size = 32;
  cfg.resize_low = cfg.resize_high = 0.5;
  cfg.hflip_prob = 0.0;
  const SampleRecord a = augment(s, cfg, 1, 255);
  EXPECT_EQ(a.label.at(31, 31), 255);
  EXPECT_NE(a.label.at(0, 0), 255);
}

TEST(Augment, SampleSeedsDiffer) {
  std::set<uint64_t> seen;
  for (int64_t e = 0; e < 4; ++e)
    for (int64_t i = -1; i < 50; ++i) seen.insert(sample_seed(7, e, i));
  EXPECT_EQ(seen.size(), 4u * 51u);
  EXPECT_EQ(sample_seed(7, 2, 3), sample_seed(7, 2, 3));
}

TEST(Augment, ResizeIdentityAndConstant) {
  const SampleRecord s = make_sample(32);
  EXPECT_TRUE(bit_equal(resize_raster(s.rgb, 32, 32), s.rgb));
  const Tensor c = resize_raster(Tensor({5, 7, 1}, 42.0), 13, 3);
  for (int64_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(c[i], 42.0, 1e-12);
  AugmentConfig cfg;
  cfg.resize_low = 2.0;
  cfg.resize_high = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
