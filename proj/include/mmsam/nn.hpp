#pragma once

#include <functional>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mmsam/autograd.hpp"
#include "mmsam/ops.hpp"

namespace mmsam {

/// Source of initial parameter values. In meta mode no storage is
/// allocated and modules only record shapes.
class Initializer {
 public:
  explicit Initializer(uint64_t seed, bool meta = false) : rng_(seed), meta_(meta) {}

  bool meta() const noexcept { return meta_; }
  Tensor zeros(Shape shape);
  Tensor constant(Shape shape, double value);
  Tensor normal(Shape shape, double stddev);
  /// Normal truncated to +-2 stddev.
  Tensor trunc_normal(Shape shape, double stddev);
  Tensor uniform(Shape shape, double low, double high);
  std::mt19937_64& rng() noexcept { return rng_; }

 private:
  std::mt19937_64 rng_;
  bool meta_;
};

class Module;

struct ParamRef {
  std::string name;
  Var* var;
  const Module* owner;
};

struct BufferRef {
  std::string name;
  Tensor* tensor;
};

/// Owner of named parameters, buffers, and child modules. Children and
/// parameters are members of the concrete class and are registered by
/// address, so modules are neither copyable nor movable.
class Module {
 public:
  Module() = default;
  virtual ~Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  std::vector<ParamRef> named_parameters(const std::string& prefix = "") const;
  std::vector<BufferRef> named_buffers(const std::string& prefix = "") const;
  int64_t parameter_count() const;

  void set_training(bool training);
  bool training() const noexcept { return training_; }
  /// Marks every parameter below this module as trainable or frozen.
  void set_trainable(bool trainable);
  void zero_grad();
  /// Calls `fn` on this module and every descendant, parents first.
  void for_each_module(const std::function<void(Module&)>& fn);

  /// Normalization layers are exempt from weight decay.
  virtual bool is_norm() const { return false; }

 protected:
  void register_parameter(std::string name, Var& slot, Tensor init);
  void register_buffer(std::string name, Tensor& slot);
  void register_module(std::string name, Module& child);

 private:
  void collect_parameters(const std::string& prefix, std::vector<ParamRef>& out) const;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) const;

  std::vector<std::pair<std::string, Var*>> params_;
  std::vector<std::pair<std::string, Tensor*>> buffers_;
  std::vector<std::pair<std::string, Module*>> children_;
  bool training_ = true;
};

class Linear : public Module {
 public:
  Linear(Initializer& init, int64_t in, int64_t out, bool bias = true, double stddev = 0.02);
  Var operator()(const Var& x) const { return linear(x, weight, bias); }
  int64_t in_features() const { return in_; }
  int64_t out_features() const { return out_; }

  Var weight;
  Var bias;

 private:
  int64_t in_, out_;
};

class LayerNorm : public Module {
 public:
  LayerNorm(Initializer& init, int64_t dim, double eps = 1e-6);
  Var operator()(const Var& x) const { return layer_norm(x, weight, bias, eps_); }
  bool is_norm() const override { return true; }

  Var weight;
  Var bias;

 private:
  double eps_;
};

/// NHWC convolution, weight stored HWIO.
class Conv2d : public Module {
 public:
  Conv2d(Initializer& init, int64_t in, int64_t out, int64_t kernel, int64_t stride = 1, int64_t pad = 0,
         int64_t groups = 1, bool bias = true);
  Var operator()(const Var& x) const { return conv2d(x, weight, bias, stride_, pad_, groups_); }

  Var weight;
  Var bias;

 private:
  int64_t stride_, pad_, groups_;
};

class ConvTranspose2d : public Module {
 public:
  ConvTranspose2d(Initializer& init, int64_t in, int64_t out, int64_t stride);
  Var operator()(const Var& x) const { return conv_transpose2d(x, weight, bias, stride_); }

  Var weight;
  Var bias;

 private:
  int64_t stride_;
};

class BatchNorm : public Module {
 public:
  BatchNorm(Initializer& init, int64_t channels, double eps = 1e-5, double momentum = 0.1);
  Var operator()(const Var& x) { return batch_norm(x, weight, bias, state_, training()); }
  bool is_norm() const override { return true; }
  const BatchNormState& state() const { return state_; }

  Var weight;
  Var bias;

 private:
  BatchNormState state_;
};

/// Fused-projection self attention on (B, T, D) tokens.
class SelfAttention : public Module {
 public:
  SelfAttention(Initializer& init, int64_t dim, int64_t heads);
  Var operator()(const Var& x) const;

  Linear qkv;
  Linear proj;

 private:
  int64_t dim_, heads_;
};

/// Attention with queries from one sequence and keys/values from another.
class CrossAttention : public Module {
 public:
  CrossAttention(Initializer& init, int64_t dim, int64_t heads);
  Var operator()(const Var& query, const Var& context) const;

  Linear q;
  Linear kv;
  Linear proj;

 private:
  int64_t dim_, heads_;
};

class Mlp : public Module {
 public:
  Mlp(Initializer& init, int64_t dim, int64_t hidden);
  Var operator()(const Var& x) const { return lin2(gelu(lin1(x))); }

  Linear lin1;
  Linear lin2;
};

/// (B, h, w, C) map <-> (B, h*w, C) tokens.
Var map_to_tokens(const Var& map);
Var tokens_to_map(const Var& tokens, int64_t h, int64_t w);

}  // namespace mmsam
