#include "mmsam/autograd.hpp"

#include <unordered_set>

#include "mmsam/error.hpp"

namespace mmsam {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

const Tensor& Var::value() const {
  if (!node_) throw ArgumentError("access to undefined Var");
  return node_->value;
}

Tensor& Var::mutable_value() {
  if (!node_) throw ArgumentError("access to undefined Var");
  return node_->value;
}

bool Var::requires_grad() const noexcept { return node_ && node_->requires_grad; }

void Var::set_requires_grad(bool flag) {
  if (!node_) throw ArgumentError("set_requires_grad on undefined Var");
  node_->requires_grad = flag;
}

bool Var::has_grad() const noexcept { return node_ && node_->grad.defined(); }

const Tensor& Var::grad() const {
  if (!has_grad()) throw ArgumentError("Var has no gradient");
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

void Var::accumulate_grad(Tensor grad) const {
  if (!node_ || !node_->requires_grad) return;
  if (grad.shape() != node_->value.shape())
    throw ArgumentError("gradient shape " + to_string(grad.shape()) + " does not match value shape " +
                        to_string(node_->value.shape()));
  if (!node_->grad.defined())
    node_->grad = std::move(grad);
  else
    node_->grad.add_(grad);
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(const Tensor&)> backward) {
  Var out(std::move(value));
  if (!g_grad_enabled || out.value().is_meta()) return out;
  bool any = false;
  for (const Var& v : inputs) any = any || v.requires_grad();
  if (!any) return out;
  out.node_->requires_grad = true;
  out.node_->backward = std::move(backward);
  out.node_->inputs.reserve(inputs.size());
  for (const Var& v : inputs)
    if (v.requires_grad()) out.node_->inputs.push_back(v.shared_node());
  return out;
}

void backward(const Var& root) {
  if (!root.defined() || root.value().numel() != 1) throw ArgumentError("backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS; `order` ends up topologically sorted.
  // Shared ownership keeps nodes alive while parents release their inputs.
  std::vector<std::shared_ptr<Node>> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<std::shared_ptr<Node>, size_t>> stack;
  stack.emplace_back(root.shared_node(), 0);
  seen.insert(stack.back().first.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      std::shared_ptr<Node> child = node->inputs[next++];
      if (child->requires_grad && seen.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  root.accumulate_grad(Tensor(root.value().shape(), 1.0));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->get();
    if (!node->backward) continue;  // leaf
    if (node->grad.defined()) node->backward(node->grad);
    node->grad = Tensor();
    node->backward = nullptr;
    node->inputs.clear();
  }
}

}  // namespace mmsam
