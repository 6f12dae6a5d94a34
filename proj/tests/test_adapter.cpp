#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mmsam/adapter.hpp"
#include "mmsam/error.hpp"
#include "support/oracles.hpp"

using namespace mmsam;
using namespace mmsam::testing;

namespace {

TokenMatrix random_tokens(std::mt19937_64& rng, int64_t batch, std::vector<std::pair<int64_t, int64_t>> shapes,
                          int64_t dim, bool grad = false) {
  std::vector<Var> maps;
  for (auto [h, w] : shapes) maps.emplace_back(random_tensor({batch, h, w, dim}, rng), grad);
  TokenMatrix t = TokenMatrix::stack(maps);
  if (grad) t.data = Var(t.data.value(), true);
  return t;
}

std::vector<double> to_vec(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(ReferencePoints, AreCellCentersPerQueryLevel) {
  std::mt19937_64 rng(1);
  const TokenMatrix q = random_tokens(rng, 1, {{2, 4}, {1, 2}}, 3);
  const Tensor ref = reference_points(q, 3);
  ASSERT_EQ(ref.shape(), (Shape{10, 3, 2}));
  EXPECT_DOUBLE_EQ(ref[(5 * 3 + 2) * 2], 0.375);      // token 5 = (y 1, x 1) of the 2x4 level
  EXPECT_DOUBLE_EQ(ref[(5 * 3 + 2) * 2 + 1], 0.75);
  EXPECT_DOUBLE_EQ(ref[(9 * 3 + 0) * 2], 0.75);       // token 9 = (0, 1) of the 1x2 level
  EXPECT_DOUBLE_EQ(ref[(9 * 3 + 0) * 2 + 1], 0.5);
}

TEST(MsDeformAttn, InitGivesUniformWeightsAndRadialOffsets) {
  Initializer init(2);
  MsDeformAttn attn(init, 8, 4, 3, 2);
  std::mt19937_64 rng(3);
  const Tensor w = attn.attention_weights_of(Var(random_tensor({1, 5, 8}, rng))).value();
  for (double v : w.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 6.0);
  const Tensor& b = attn.sampling_offsets.bias.value();
  // Head 0 points along +x with radius p + 1.
  EXPECT_DOUBLE_EQ(b[0], 1.0);
  EXPECT_DOUBLE_EQ(b[1], 0.0);
  EXPECT_DOUBLE_EQ(b[2], 2.0);
}

TEST(MsDeformAttn, ForwardMatchesOracle) {
  Initializer init(4);
  const int64_t D = 8, heads = 2, L = 2, P = 3;
  MsDeformAttn attn(init, D, heads, L, P);
  std::mt19937_64 rng(5);
  jitter(attn, rng, 0.3);
  const TokenMatrix query = random_tokens(rng, 2, {{3, 3}}, D);
  const TokenMatrix kv = random_tokens(rng, 2, {{4, 4}, {2, 2}}, D);
  const Tensor ref = reference_points(query, L);
  const Tensor out = attn(query.data, ref, kv).value();

  const Tensor value = attn.value_proj(kv.data).value();
  const Tensor offsets = attn.sampling_offsets(query.data).value();
  const Tensor weights = attn.attention_weights_of(query.data).value();
  kernels::MsdaGeom g;
  g.batch = 2, g.q_len = 9, g.kv_len = 20, g.heads = heads, g.head_dim = D / heads, g.points = P;
  g.level_h = {4, 2}, g.level_w = {4, 2}, g.level_start = {0, 16};
  std::vector<double> loc(offsets.numel());
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t q = 0; q < 9; ++q)
      for (int64_t h = 0; h < heads; ++h)
        for (int64_t l = 0; l < L; ++l)
          for (int64_t p = 0; p < P; ++p) {
            const int64_t i = ((((b * 9 + q) * heads + h) * L + l) * P + p) * 2;
            loc[i] = ref[(q * L + l) * 2] + offsets[i] / static_cast<double>(g.level_w[l]);
            loc[i + 1] = ref[(q * L + l) * 2 + 1] + offsets[i + 1] / static_cast<double>(g.level_h[l]);
          }
  const auto sampled = msda_oracle(g, to_vec(value), loc, to_vec(weights));
  const Tensor expect = attn.output_proj(Var(Tensor({2, 9, D}, sampled))).value();
  EXPECT_LT(max_abs_diff(out, expect), 1e-12);
}

TEST(MsDeformAttn, RejectsLevelMismatch) {
  Initializer init(4);
  MsDeformAttn attn(init, 8, 2, 3, 2);
  std::mt19937_64 rng(5);
  const TokenMatrix q = random_tokens(rng, 1, {{2, 2}}, 8);
  const TokenMatrix kv = random_tokens(rng, 1, {{2, 2}}, 8);
  EXPECT_THROW(attn(q.data, reference_points(q, 3), kv), ArgumentError);
}

TEST(Injector, ZeroGammaIsExactIdentity) {
  AdapterConfig cfg;
  cfg.msda_heads = 2;
  Initializer init(6);
  Injector inj(init, 8, cfg, 3);
  std::mt19937_64 rng(7);
  const TokenMatrix f = random_tokens(rng, 2, {{4, 4}}, 8);
  const TokenMatrix mm = random_tokens(rng, 2, {{8, 8}, {4, 4}, {2, 2}}, 8);
  const TokenMatrix out = inj(f, mm);
  EXPECT_TRUE(bit_equal(out.data.value(), f.data.value()));
  EXPECT_TRUE(out.same_geometry(f));
}

TEST(Injector, GradientsMatchFiniteDifferences) {
  AdapterConfig cfg;
  cfg.msda_heads = 2;
  cfg.msda_points = 2;
  Initializer init(8);
  Injector inj(init, 8, cfg, 3);
  std::mt19937_64 rng(9);
  jitter(inj, rng, 0.2);
  const TokenMatrix f = random_tokens(rng, 1, {{4, 4}}, 8, true);
  const TokenMatrix mm = random_tokens(rng, 1, {{8, 8}, {4, 4}, {2, 2}}, 8, true);
  const Tensor r = random_tensor({1, 16, 8}, rng);
  auto params = parameters_of(inj);
  params.emplace_back("f_sam", f.data);
  params.emplace_back("f_mm", mm.data);
  const auto rep = gradcheck([&] { return sum(mul(inj(f, mm).data, constant(r))); }, params, 24);
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
  EXPECT_LT(rep.skipped, rep.checked / 20 + 1);
}

TEST(Extractor, GradientsMatchFiniteDifferences) {
  AdapterConfig cfg;
  cfg.msda_heads = 2;
  cfg.msda_points = 2;
  Initializer init(10);
  Extractor ext(init, 8, cfg);
  std::mt19937_64 rng(11);
  jitter(ext, rng, 0.2);
  const TokenMatrix f = random_tokens(rng, 1, {{4, 4}}, 8, true);
  const TokenMatrix mm = random_tokens(rng, 1, {{8, 8}, {4, 4}, {2, 2}}, 8, true);
  const Tensor r = random_tensor({1, 84, 8}, rng);
  auto params = parameters_of(ext);
  params.emplace_back("f_sam", f.data);
  params.emplace_back("f_mm", mm.data);
  const auto rep = gradcheck([&] { return sum(mul(ext(mm, f).data, constant(r))); }, params, 24);
  EXPECT_LT(rep.max_rel, 1e-4) << rep.worst;
  EXPECT_LT(rep.skipped, rep.checked / 20 + 1);
}

TEST(Extractor, PreservesMultiScaleGeometry) {
  AdapterConfig cfg;
  cfg.msda_heads = 2;
  Initializer init(12);
  Extractor ext(init, 8, cfg);
  std::mt19937_64 rng(13);
  const TokenMatrix f = random_tokens(rng, 1, {{4, 4}}, 8);
  const TokenMatrix mm = random_tokens(rng, 1, {{8, 8}, {4, 4}, {2, 2}}, 8);
  EXPECT_TRUE(ext(mm, f).same_geometry(mm));
  EXPECT_THROW(ext(mm, mm), ArgumentError);
}

TEST(AdapterConfig, PairsMustMatchGroups) {
  AdapterConfig cfg;
  cfg.num_pairs = 3;
  EXPECT_THROW(cfg.validate(64, 4), ConfigError);
  cfg.num_pairs = 4;
  cfg.msda_heads = 7;
  EXPECT_THROW(cfg.validate(64, 4), ConfigError);
}
