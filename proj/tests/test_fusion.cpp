#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmsam/error.hpp"
#include "mmsam/fusion.hpp"
#include "support/oracles.hpp"

using namespace mmsam;
using namespace mmsam::testing;

namespace {

FeaturePyramid random_pyramid(std::mt19937_64& rng, int64_t batch, int64_t size, std::array<int64_t, 4> ch,
                              bool grad = false) {
  FeaturePyramid p;
  for (size_t i = 0; i < 4; ++i) {
    const int64_t s = size >> (i + 2);
    p.maps.emplace_back(random_tensor({batch, s, s, ch[i]}, rng), grad);
  }
  return p;
}

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::function<Var()> probe_pyramid(std::function<FeaturePyramid()> f, std::mt19937_64& rng) {
  const FeaturePyramid shape = f();
  auto weights = std::make_shared<std::vector<Tensor>>();
  for (const Var& m : shape.maps) weights->push_back(random_tensor(m.shape(), rng));
  return [f, weights] {
    const FeaturePyramid p = f();
    Var acc = sum(mul(p.maps[0], constant((*weights)[0])));
    for (size_t i = 1; i < 4; ++i) acc = add(acc, sum(mul(p.maps[i], constant((*weights)[i]))));
    return acc;
  };
}

}  // namespace

TEST(FusionConfig, ParsesKindsAndRejectsUnknown) {
  EXPECT_EQ(parse_fusion_kind("concatenation"), FusionKind::concatenation);
  EXPECT_EQ(parse_fusion_kind(to_string(FusionKind::road_fusion)), FusionKind::road_fusion);
  try {
    parse_fusion_kind("sum");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.fusion.kind");
  }
  EXPECT_THROW(parse_encoder_mode("shared"), ConfigError);
}

TEST(CoordinateAttention, MatchesLoopOracle) {
  Initializer init(7);
  const int64_t B = 2, H = 3, W = 4, C = 5;
  CoordinateAttention ca(init, C);
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({B, H, W, C}, rng);
  const Tensor y = ca(Var(x)).value();
  const int64_t M = ca.reduce.out_features();
  EXPECT_EQ(M, 8);
  auto lin = [](const Linear& l, const std::vector<double>& in) {
    std::vector<double> out(static_cast<size_t>(l.out_features()));
    for (int64_t o = 0; o < l.out_features(); ++o) {
      double acc = l.bias.value()[o];
      for (int64_t i = 0; i < l.in_features(); ++i) acc += l.weight.value()[o * l.in_features() + i] * in[i];
      out[static_cast<size_t>(o)] = acc;
    }
    return out;
  };
  for (int64_t b = 0; b < B; ++b) {
    std::vector<std::vector<double>> gh(H), gw(W);
    for (int64_t h = 0; h < H; ++h) {
      std::vector<double> pooled(C, 0.0);
      for (int64_t w = 0; w < W; ++w)
        for (int64_t c = 0; c < C; ++c) pooled[c] += x[((b * H + h) * W + w) * C + c] / W;
      auto mid = lin(ca.reduce, pooled);
      for (double& v : mid) v = std::max(0.0, v);
      gh[h] = lin(ca.expand_h, mid);
    }
    for (int64_t w = 0; w < W; ++w) {
      std::vector<double> pooled(C, 0.0);
      for (int64_t h = 0; h < H; ++h)
        for (int64_t c = 0; c < C; ++c) pooled[c] += x[((b * H + h) * W + w) * C + c] / H;
      auto mid = lin(ca.reduce, pooled);
      for (double& v : mid) v = std::max(0.0, v);
      gw[w] = lin(ca.expand_w, mid);
    }
    for (int64_t h = 0; h < H; ++h)
      for (int64_t w = 0; w < W; ++w)
        for (int64_t c = 0; c < C; ++c) {
          const int64_t i = ((b * H + h) * W + w) * C + c;
          EXPECT_NEAR(y[i], x[i] * sigm(gh[h][c]) * sigm(gw[w][c]), 1e-12);
        }
  }
}

TEST(GlobalRecalibration, OutputIsNormalizedConcatTimesChannelGate) {
  Initializer init(9);
  GlobalRecalibration gfrm(init, 4, 2);
  std::mt19937_64 rng(10);
  const Var a(random_tensor({2, 3, 3, 4}, rng)), b(random_tensor({2, 3, 3, 4}, rng));
  const Tensor out = gfrm(a, b).value();
  const Tensor gate = gfrm.gate(a, b).value();
  ASSERT_EQ(out.shape(), (Shape{2, 3, 3, 8}));
  ASSERT_EQ(gate.shape(), (Shape{2, 1, 1, 8}));
  // Undo the gate and check the gate is the sigmoid of the spatial mean.
  for (int64_t bb = 0; bb < 2; ++bb)
    for (int64_t c = 0; c < 8; ++c) {
      const double g = gate[bb * 8 + c];
      ASSERT_GT(g, 0.0);
      ASSERT_LT(g, 1.0);
      double m = 0.0;
      for (int64_t p = 0; p < 9; ++p) m += out[(bb * 9 + p) * 8 + c] / g / 9.0;
      EXPECT_NEAR(sigm(m), g, 1e-12);
    }
  EXPECT_THROW(gfrm(a, Var(Tensor({2, 2, 3, 4}))), ArgumentError);
}

TEST(EnhanceIntegrate, ZeroRefineReducesToCoordinateAttentionOfWeightedSum) {
  Initializer init(11);
  EnhanceIntegrate feim(init, 6);
  feim.refine_pw.weight.mutable_value().fill(0.0);
  feim.refine_pw.bias.mutable_value().fill(0.0);
  std::mt19937_64 rng(12);
  const Var g(random_tensor({1, 4, 4, 6}, rng)), l(random_tensor({1, 4, 4, 6}, rng));
  const Tensor expect = feim.coord(scale(add(g, l), 0.5)).value();
  EXPECT_LT(max_abs_diff(feim(g, l).value(), expect), 1e-14);
}

TEST(Fuse, AddAndConcatShapesAndErrors) {
  std::mt19937_64 rng(13);
  const auto a = random_pyramid(rng, 1, 64, {4, 8, 8, 8}), b = random_pyramid(rng, 1, 64, {4, 8, 8, 8});
  const auto cat = fuse_concat(a, b);
  EXPECT_EQ(cat.channels(), (std::array<int64_t, 4>{8, 16, 16, 16}));
  const auto s = fuse_add(a, b);
  EXPECT_DOUBLE_EQ(s.maps[2].value()[5], a.maps[2].value()[5] + b.maps[2].value()[5]);
  const auto odd = random_pyramid(rng, 1, 64, {4, 8, 8, 4});
  EXPECT_THROW(fuse_add(a, odd), ArgumentError);
  EXPECT_NO_THROW(fuse_concat(a, odd));
  const auto small = random_pyramid(rng, 1, 32, {4, 8, 8, 8});
  EXPECT_THROW(fuse_concat(a, small), ArgumentError);
}

TEST(RoadFusion, DoublesWidthsAndBackpropagates) {
  Initializer init(14);
  const std::array<int64_t, 4> ch{4, 4, 8, 8};
  RoadFusion road(init, ch, 2);
  std::mt19937_64 rng(15);
  const auto a = random_pyramid(rng, 1, 32, ch, true), b = random_pyramid(rng, 1, 32, ch, true);
  EXPECT_EQ(road(a, b).channels(), (std::array<int64_t, 4>{8, 8, 16, 16}));
  jitter(road, rng);
  auto params = parameters_of(road);
  for (size_t i = 0; i < 4; ++i) {
    params.emplace_back("rgb" + std::to_string(i), a.maps[i]);
    params.emplace_back("x" + std::to_string(i), b.maps[i]);
  }
  const auto r = gradcheck(probe_pyramid([&] { return road(a, b); }, rng), params, 6);
  EXPECT_LT(r.max_rel, 1e-4) << r.worst;
  EXPECT_LT(r.skipped, r.checked / 20 + 1);
}

TEST(FusionEncoder, EncoderModesAndNames) {
  FusionConfig cfg;
  cfg.encoder_channels = {8, 8, 16, 16};
  cfg.encoder_depths = {1, 1, 1, 1};
  cfg.target_dim = 16;
  cfg.kind = FusionKind::concatenation;
  Initializer i1(1), i2(1);
  FusionEncoder specific(i1, cfg);
  cfg.encoder_mode = EncoderMode::modality_agnostic;
  FusionEncoder agnostic(i2, cfg);
  EXPECT_NE(&specific.encoder("rgb"), &specific.encoder("aux"));
  EXPECT_EQ(&agnostic.encoder("rgb"), &agnostic.encoder("aux"));
  EXPECT_LT(agnostic.parameter_count(), specific.parameter_count());
  bool saw_aux = false;
  for (const auto& p : specific.named_parameters()) saw_aux = saw_aux || p.name.starts_with("encoder_aux.");
  EXPECT_TRUE(saw_aux);
  EXPECT_THROW(specific.encoder("depth"), ArgumentError);
}

TEST(FusionEncoder, RgbOnlyIgnoresAux) {
  FusionConfig cfg;
  cfg.encoder_channels = {8, 8, 16, 16};
  cfg.encoder_depths = {1, 1, 1, 1};
  cfg.target_dim = 16;
  cfg.kind = FusionKind::rgb_only;
  Initializer init(3);
  FusionEncoder enc(init, cfg);
  std::mt19937_64 rng(4);
  const Var rgb(random_tensor({1, 64, 64, 3}, rng));
  const auto p1 = enc(rgb, Var(random_tensor({1, 64, 64, 1}, rng)));
  const auto p2 = enc(rgb, Var(random_tensor({1, 64, 64, 1}, rng)));
  EXPECT_TRUE(bit_equal(p1.tokens.data.value(), p2.tokens.data.value()));
  EXPECT_EQ(p1.f1.shape(), (Shape{1, 16, 16, 16}));
  EXPECT_EQ(p1.tokens.data.shape(), (Shape{1, 64 + 16 + 4, 16}));
  EXPECT_EQ(p1.tokens.levels(), 3u);
}

TEST(FusionEncoder, AuxAffectsMultimodalKinds) {
  for (auto kind : {FusionKind::addition, FusionKind::concatenation, FusionKind::road_fusion}) {
    FusionConfig cfg;
    cfg.encoder_channels = {8, 8, 16, 16};
    cfg.encoder_depths = {1, 1, 1, 1};
    cfg.target_dim = 16;
    cfg.kind = kind;
    Initializer init(3);
    FusionEncoder enc(init, cfg);
    std::mt19937_64 rng(4);
    const Var rgb(random_tensor({1, 32, 32, 3}, rng));
    const auto p1 = enc(rgb, Var(random_tensor({1, 32, 32, 1}, rng)));
    const auto p2 = enc(rgb, Var(random_tensor({1, 32, 32, 3}, rng)));
    EXPECT_FALSE(bit_equal(p1.tokens.data.value(), p2.tokens.data.value())) << to_string(kind);
  }
}

TEST(ReplicateChannels, RejectsTwoChannelAux) {
  EXPECT_EQ(replicate_channels(Var(Tensor({1, 4, 4, 1}))).shape(), (Shape{1, 4, 4, 3}));
  EXPECT_THROW(replicate_channels(Var(Tensor({1, 4, 4, 2}))), ArgumentError);
}
