#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmsam/error.hpp"
#include "mmsam/schedule.hpp"

using namespace mmsam;

namespace {

long double lr_oracle(long double p, const ScheduleConfig& c) {
  const long double nw = c.warmup_epochs;
  if (nw > 0 && p <= nw) return c.eta_base * std::pow(static_cast<long double>(c.warmup_ratio), 1.0L - p / nw);
  return (static_cast<long double>(c.eta_base) - c.eta_min) *
             std::pow(1.0L - p / static_cast<long double>(c.max_epochs), static_cast<long double>(c.alpha)) +
         c.eta_min;
}

double rel(long double got, long double want) {
  return static_cast<double>(std::fabs(got - want) / std::max(std::fabs(want), 1e-300L));
}

}  // namespace

TEST(Schedule, Anchors) {
  const ScheduleConfig c;
  EXPECT_NEAR(lr_at(0.0, c), 2e-5, 1e-20);
  EXPECT_NEAR(lr_at(10.0, c), 2e-4, 1e-19);
  EXPECT_DOUBLE_EQ(lr_at(100.0, c), 0.0);
  EXPECT_NEAR(layerwise_lr(0, 24, c), std::pow(0.9, 23), 1e-16);
  EXPECT_DOUBLE_EQ(layerwise_lr(23, 24, c), 1.0);
}

TEST(Schedule, ClosedFormAtRandomDraws) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    ScheduleConfig c;
    c.eta_base = std::pow(10.0, -6 + 4 * u(rng));
    c.eta_min = c.eta_base * 0.1 * u(rng);
    c.max_epochs = 10 + std::floor(190 * u(rng));
    c.warmup_epochs = std::floor(c.max_epochs * 0.5 * u(rng));
    c.warmup_ratio = 0.01 + 0.99 * u(rng);
    c.alpha = 0.5 + 1.5 * u(rng);
    c.layer_decay = 0.5 + 0.5 * u(rng);
    c.validate();
    const double p = c.max_epochs * u(rng);
    EXPECT_LE(rel(lr_at(p, c), lr_oracle(p, c)), 1e-12) << "draw " << i;
    const int64_t L = 1 + static_cast<int64_t>(31 * u(rng));
    const int64_t layer = static_cast<int64_t>((L - 1) * u(rng));
    const long double want = std::pow(static_cast<long double>(c.layer_decay), static_cast<long double>(L - layer - 1));
    EXPECT_LE(rel(layerwise_lr(layer, L, c), want), 1e-12) << "draw " << i;
  }
}

TEST(Schedule, WarmupIsMonotoneAndDecayIsMonotone) {
  const ScheduleConfig c;
  for (double p = 0.0; p < 10.0; p += 0.25) EXPECT_LT(lr_at(p, c), lr_at(p + 0.25, c));
  for (double p = 10.25; p < 100.0; p += 0.25) EXPECT_GT(lr_at(p, c), lr_at(p + 0.25, c));
}

TEST(Schedule, Errors) {
  ScheduleConfig c;
  EXPECT_THROW(lr_at(-0.1, c), ArgumentError);
  EXPECT_THROW(lr_at(100.5, c), ArgumentError);
  EXPECT_THROW(layerwise_lr(24, 24, c), ArgumentError);
  c.warmup_epochs = 100;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.eta_min = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}
