#include "mmsam/nn.hpp"

#include <cmath>

#include "mmsam/error.hpp"

namespace mmsam {

Tensor Initializer::zeros(Shape shape) { return constant(std::move(shape), 0.0); }

Tensor Initializer::constant(Shape shape, double value) {
  if (meta_) return Tensor::meta(std::move(shape));
  return Tensor(std::move(shape), value);
}

Tensor Initializer::normal(Shape shape, double stddev) {
  if (meta_) return Tensor::meta(std::move(shape));
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng_);
  return t;
}

Tensor Initializer::trunc_normal(Shape shape, double stddev) {
  if (meta_) return Tensor::meta(std::move(shape));
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) {
    do v = dist(rng_);
    while (std::abs(v) > 2.0 * stddev);
  }
  return t;
}

Tensor Initializer::uniform(Shape shape, double low, double high) {
  if (meta_) return Tensor::meta(std::move(shape));
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(low, high);
  for (double& v : t.data()) v = dist(rng_);
  return t;
}

void Module::register_parameter(std::string name, Var& slot, Tensor init) {
  slot = Var(std::move(init), true);
  params_.emplace_back(std::move(name), &slot);
}

void Module::register_buffer(std::string name, Tensor& slot) { buffers_.emplace_back(std::move(name), &slot); }

void Module::register_module(std::string name, Module& child) { children_.emplace_back(std::move(name), &child); }

void Module::collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) const {
  for (const auto& [name, var] : params_) out.push_back({prefix + name, var, this});
  for (const auto& [name, child] : children_) child->collect_parameters(prefix + name + ".", out);
}

void Module::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) const {
  for (const auto& [name, t] : buffers_) out.push_back({prefix + name, t});
  for (const auto& [name, child] : children_) child->collect_buffers(prefix + name + ".", out);
}

std::vector<ParamRef> Module::named_parameters(const std::string& prefix) const {
  std::vector<ParamRef> out;
  collect_parameters(prefix.empty() ? prefix : prefix + ".", out);
  return out;
}

std::vector<BufferRef> Module::named_buffers(const std::string& prefix) const {
  std::vector<BufferRef> out;
  collect_buffers(prefix.empty() ? prefix : prefix + ".", out);
  return out;
}

int64_t Module::parameter_count() const {
  int64_t n = 0;
  for (const auto& p : named_parameters()) n += numel(p.var->shape());
  return n;
}

void Module::for_each_module(const std::function<void(Module&)>& fn) {
  fn(*this);
  for (auto& [name, child] : children_) child->for_each_module(fn);
}

void Module::set_training(bool training) {
  training_ = training;
  for (auto& [name, child] : children_) child->set_training(training);
}

void Module::set_trainable(bool trainable) {
  for (const auto& p : named_parameters()) p.var->set_requires_grad(trainable);
}

void Module::zero_grad() {
  for (const auto& p : named_parameters()) p.var->zero_grad();
}

Linear::Linear(Initializer& init, int64_t in, int64_t out, bool with_bias, double stddev) : in_(in), out_(out) {
  register_parameter("weight", weight, init.trunc_normal({out, in}, stddev));
  if (with_bias) register_parameter("bias", bias, init.zeros({out}));
}

LayerNorm::LayerNorm(Initializer& init, int64_t dim, double eps) : eps_(eps) {
  register_parameter("weight", weight, init.constant({dim}, 1.0));
  register_parameter("bias", bias, init.zeros({dim}));
}

Conv2d::Conv2d(Initializer& init, int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t pad,
               int64_t groups, bool with_bias)
    : stride_(stride), pad_(pad), groups_(groups) {
  if (in % groups != 0 || out % groups != 0) throw ArgumentError("conv groups must divide channels");
  const double fan_in = static_cast<double>(kernel * kernel * (in / groups));
  register_parameter("weight", weight, init.trunc_normal({kernel, kernel, in / groups, out}, std::sqrt(2.0 / fan_in)));
  if (with_bias) register_parameter("bias", bias, init.zeros({out}));
}

ConvTranspose2d::ConvTranspose2d(Initializer& init, int64_t in, int64_t out, int64_t stride) : stride_(stride) {
  register_parameter("weight", weight, init.trunc_normal({stride, stride, in, out}, std::sqrt(1.0 / in)));
  register_parameter("bias", bias, init.zeros({out}));
}

BatchNorm::BatchNorm(Initializer& init, int64_t channels, double eps, double momentum) {
  register_parameter("weight", weight, init.constant({channels}, 1.0));
  register_parameter("bias", bias, init.zeros({channels}));
  state_.running_mean = init.zeros({channels});
  state_.running_var = init.constant({channels}, 1.0);
  state_.eps = eps;
  state_.momentum = momentum;
  register_buffer("running_mean", state_.running_mean);
  register_buffer("running_var", state_.running_var);
}

SelfAttention::SelfAttention(Initializer& init, int64_t dim, int64_t heads)
    : qkv(init, dim, 3 * dim), proj(init, dim, dim), dim_(dim), heads_(heads) {
  if (heads < 1 || dim % heads != 0) throw ArgumentError("attention heads must divide the embedding width");
  register_module("qkv", qkv);
  register_module("proj", proj);
}

Var SelfAttention::operator()(const Var& x) const {
  const Var packed = qkv(x);
  const Var q = slice(packed, -1, 0, dim_);
  const Var k = slice(packed, -1, dim_, 2 * dim_);
  const Var v = slice(packed, -1, 2 * dim_, 3 * dim_);
  return proj(attention(q, k, v, heads_));
}

CrossAttention::CrossAttention(Initializer& init, int64_t dim, int64_t heads)
    : q(init, dim, dim), kv(init, dim, 2 * dim), proj(init, dim, dim), dim_(dim), heads_(heads) {
  if (heads < 1 || dim % heads != 0) throw ArgumentError("attention heads must divide the embedding width");
  register_module("q", q);
  register_module("kv", kv);
  register_module("proj", proj);
}

Var CrossAttention::operator()(const Var& query, const Var& context) const {
  const Var packed = kv(context);
  return proj(attention(q(query), slice(packed, -1, 0, dim_), slice(packed, -1, dim_, 2 * dim_), heads_));
}

Mlp::Mlp(Initializer& init, int64_t dim, int64_t hidden) : lin1(init, dim, hidden), lin2(init, hidden, dim) {
  register_module("lin1", lin1);
  register_module("lin2", lin2);
}

Var map_to_tokens(const Var& map) {
  if (map.value().rank() != 4) throw ArgumentError("expected an NHWC map, got " + to_string(map.shape()));
  return reshape(map, {map.dim(0), map.dim(1) * map.dim(2), map.dim(3)});
}

Var tokens_to_map(const Var& tokens, int64_t h, int64_t w) {
  if (tokens.value().rank() != 3 || tokens.dim(1) != h * w)
    throw ArgumentError("token count of " + to_string(tokens.shape()) + " does not match a " + std::to_string(h) +
                        "x" + std::to_string(w) + " map");
  return reshape(tokens, {tokens.dim(0), h, w, tokens.dim(2)});
}

}  // namespace mmsam
