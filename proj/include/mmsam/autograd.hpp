#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mmsam/tensor.hpp"

namespace mmsam {

struct Node;

/// Handle to a value in the reverse-mode tape. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor& value() const;
  /// Direct access for optimizers and weight loading on leaf variables.
  Tensor& mutable_value();
  const Shape& shape() const { return value().shape(); }
  int64_t dim(int64_t axis) const { return value().dim(axis); }
  bool is_meta() const { return value().is_meta(); }

  bool requires_grad() const noexcept;
  void set_requires_grad(bool flag);

  bool has_grad() const noexcept;
  const Tensor& grad() const;
  void zero_grad();
  void accumulate_grad(Tensor grad) const;

  const Node* node() const noexcept { return node_.get(); }
  std::shared_ptr<Node> shared_node() const noexcept { return node_; }

 private:
  friend Var make_result(Tensor, std::vector<Var>, std::function<void(const Tensor&)>);
  std::shared_ptr<Node> node_;
};

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(const Tensor&)> backward;
};

/// Builds the output of a differentiable op. The backward closure receives
/// the output gradient and forwards it to inputs via accumulate_grad; it is
/// dropped when no input needs a gradient or grad mode is off.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward);

/// Reverse sweep from a scalar root. Intermediate gradients and closures are
/// released as the sweep proceeds; leaf gradients accumulate.
void backward(const Var& root);

bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace mmsam
