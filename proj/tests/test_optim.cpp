#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mmsam/optim.hpp"

using namespace mmsam;

TEST(ParamGroups, LayerIndex) {
  EXPECT_EQ(backbone_layer_of("blocks.7.attn.qkv.weight"), 7);
  EXPECT_EQ(backbone_layer_of("blocks.12.norm1.bias"), 12);
  EXPECT_EQ(backbone_layer_of("patch_embed.proj.weight"), 0);
  EXPECT_EQ(backbone_layer_of("pos_embed"), 0);
  EXPECT_EQ(backbone_layer_of("neck.weight"), -1);
}

TEST(ParamGroups, PartitionCoversEveryTrainableParameterOnce) {
  ModelConfig mc = ModelConfig::toy(4);
  mc.backbone.finetune = true;
  MMSamModel model(mc, 0);
  model.apply_freeze();
  ScheduleConfig sc;
  sc.new_module_boost = 10.0;
  const auto groups = build_param_groups(model, sc);
  std::set<std::string> names;
  size_t total = 0;
  for (const auto& g : groups)
    for (const auto& p : g.params) {
      names.insert(p.name);
      ++total;
      if (p.owner->is_norm()) EXPECT_EQ(g.weight_decay, 0.0) << p.name;
      if (p.name == "backbone.pos_embed") EXPECT_EQ(g.weight_decay, 0.0);
      if (p.name.starts_with("backbone.patch_embed."))
        EXPECT_NEAR(g.lr_mult, std::pow(0.9, mc.backbone.depth - 1), 1e-15) << p.name;
      if (p.name.starts_with("backbone.blocks.7.")) EXPECT_DOUBLE_EQ(g.lr_mult, 1.0) << p.name;
      if (!p.name.starts_with("backbone.")) EXPECT_DOUBLE_EQ(g.lr_mult, 10.0) << p.name;
    }
  EXPECT_EQ(names.size(), total);
  EXPECT_EQ(total, model.named_parameters().size());
}

TEST(ParamGroups, FrozenBackboneIsLeftOut) {
  ModelConfig mc = ModelConfig::toy(4);
  mc.backbone.finetune = false;
  MMSamModel model(mc, 0);
  model.apply_freeze();
  for (const auto& g : build_param_groups(model, {}))
    for (const auto& p : g.params) EXPECT_FALSE(p.name.starts_with("backbone.")) << p.name;
}

TEST(AdamW, TwoStepsAgainstHandDerivation) {
  Var w(Tensor({2}, 0.0), true);
  w.mutable_value()[0] = 1.0;
  w.mutable_value()[1] = -2.0;
  ParamGroup g{"g", {{"w", &w, nullptr}}, 0.5, 0.1};
  AdamW opt({g});
  const double lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double g1[2] = {0.3, -4.0}, g2[2] = {-0.1, 2.0};
  double ref[2] = {1.0, -2.0}, m[2] = {}, v[2] = {};
  for (int s = 1; s <= 2; ++s) {
    const double* gs = s == 1 ? g1 : g2;
    w.zero_grad();
    Tensor grad({2});
    grad[0] = gs[0];
    grad[1] = gs[1];
    w.accumulate_grad(grad);
    opt.step(lr);
    for (int i = 0; i < 2; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * gs[i];
      v[i] = b2 * v[i] + (1 - b2) * gs[i] * gs[i];
      const double mh = m[i] / (1 - std::pow(b1, s)), vh = v[i] / (1 - std::pow(b2, s));
      ref[i] = ref[i] * (1 - lr * 0.5 * 0.1) - lr * 0.5 * mh / (std::sqrt(vh) + eps);
      EXPECT_NEAR(w.value()[i], ref[i], 1e-15) << "step " << s << " entry " << i;
    }
  }
  EXPECT_EQ(opt.steps(), 2);
}

TEST(AdamW, StateRoundTrip) {
  Var w(Tensor({3}, 1.0), true);
  AdamW a({ParamGroup{"g", {{"w", &w, nullptr}}, 1.0, 0.0}});
  w.accumulate_grad(Tensor({3}, 0.5));
  a.step(0.1);
  Archive ar;
  a.save(ar);
  Var w2(w.value(), true);
  AdamW b({ParamGroup{"g", {{"w", &w2, nullptr}}, 1.0, 0.0}});
  b.load(ar);
  EXPECT_EQ(b.steps(), 1);
  w.zero_grad();
  w.accumulate_grad(Tensor({3}, -0.2));
  w2.accumulate_grad(Tensor({3}, -0.2));
  a.step(0.1);
  b.step(0.1);
  EXPECT_TRUE(bit_equal(w.value(), w2.value()));
}
