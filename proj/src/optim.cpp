#include "mmsam/optim.hpp"

#include <cmath>
#include <set>

#include "mmsam/error.hpp"

namespace mmsam {

int64_t backbone_layer_of(const std::string& name) {
  if (name.starts_with("blocks.")) {
    const size_t end = name.find('.', 7);
    return std::stoll(name.substr(7, end - 7));
  }
  if (name.starts_with("patch_embed.") || name == "pos_embed") return 0;
  return -1;
}

std::vector<ParamGroup> build_param_groups(const MMSamModel& model, const ScheduleConfig& cfg) {
  const int64_t L = model.config().backbone.depth;
  std::map<std::pair<std::string, double>, ParamGroup> by_key;
  std::set<const Var*> seen;
  for (const ParamRef& p : model.named_parameters()) {
    if (!p.var->requires_grad()) continue;
    if (!seen.insert(p.var).second) throw TrainingError("parameter " + p.name + " appears in two groups");
    double mult;
    std::string group;
    const bool norm = p.owner->is_norm();
    bool no_decay = norm;
    if (p.name.starts_with("backbone.")) {
      const std::string rest = p.name.substr(9);
      const int64_t layer = backbone_layer_of(rest);
      if (layer < 0) throw TrainingError("backbone parameter " + p.name + " has no layer");
      mult = layerwise_lr(layer, L, cfg);
      no_decay = no_decay || rest == "pos_embed";
      group = "backbone.layer" + std::to_string(layer);
    } else {
      mult = cfg.new_module_boost;
      group = "side";
    }
    const double wd = no_decay ? 0.0 : cfg.weight_decay;
    auto& g = by_key[{group, wd}];
    if (g.params.empty()) {
      g.name = group + (no_decay ? ".no_decay" : "");
      g.lr_mult = mult;
      g.weight_decay = wd;
    }
    g.params.push_back(p);
  }
  std::vector<ParamGroup> out;
  for (auto& [key, g] : by_key) out.push_back(std::move(g));
  return out;
}

AdamW::AdamW(std::vector<ParamGroup> groups, AdamWConfig cfg) : groups_(std::move(groups)), cfg_(cfg) {}

void AdamW::step(double lr) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (const ParamGroup& g : groups_) {
    const double rate = lr * g.lr_mult;
    for (const ParamRef& p : g.params) {
      if (!p.var->has_grad()) continue;
      Tensor& w = p.var->mutable_value();
      const Tensor& grad = p.var->grad();
      Moments& st = state_[p.name];
      if (!st.m.defined()) {
        st.m = Tensor::like(w);
        st.v = Tensor::like(w);
      }
      const double decay = 1.0 - rate * g.weight_decay;
      for (int64_t i = 0; i < w.numel(); ++i) {
        const double gi = grad[i];
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mhat = st.m[i] / bc1;
        const double vhat = st.v[i] / bc2;
        w[i] = w[i] * decay - rate * mhat / (std::sqrt(vhat) + cfg_.eps);
      }
    }
  }
}

void AdamW::save(Archive& archive) const {
  for (const auto& [name, st] : state_) {
    archive.put("optimizer.m." + name, st.m, ArrayDtype::f64);
    archive.put("optimizer.v." + name, st.v, ArrayDtype::f64);
  }
  archive.metadata["optimizer_steps"] = step_;
}

void AdamW::load(const Archive& archive) {
  std::map<std::string, Moments> loaded;
  for (const ParamGroup& g : groups_)
    for (const ParamRef& p : g.params) {
      const std::string m = "optimizer.m." + p.name, v = "optimizer.v." + p.name;
      if (!archive.contains(m)) continue;
      if (!archive.contains(v) || archive.at(m).shape() != p.var->shape() || archive.at(v).shape() != p.var->shape())
        throw LoadError("optimizer state for " + p.name + " is inconsistent");
      loaded[p.name] = {archive.at(m), archive.at(v)};
    }
  state_ = std::move(loaded);
  step_ = archive.metadata.value("optimizer_steps", int64_t{0});
}

}  // namespace mmsam
