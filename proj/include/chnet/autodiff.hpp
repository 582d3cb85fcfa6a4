#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "chnet/tensor.hpp"

CHNET_NS_BEGIN

namespace detail {

struct Node {
  Tensor4 value;
  Tensor4 grad;  // allocated when requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward;

  void accumulate(const Tensor4& g);
  Tensor4& grad_buffer();
};

}  // namespace detail

/// A tensor value with an accumulated gradient and a link into the tape.
///
/// Variables are cheap handles; copies share the same node. The tape is
/// formed by the parent links of non-leaf nodes and is released by
/// backward(), so each graph supports a single backward pass.
class Variable {
 public:
  Variable() = default;
  explicit Variable(Tensor4 value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Tensor4& value() const { return node_->value; }
  /// Direct access to the stored value, for optimizers and perturbation
  /// tests. Must not be used while a tape references this variable.
  Tensor4& mutable_value() { return node_->value; }
  const Tensor4& grad() const { return node_->grad; }
  Tensor4& grad() { return node_->grad_buffer(); }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }

  void zero_grad();
  /// Reverse pass from this scalar (1x1x1x1) variable.
  void backward();

  /// Creates a tape node. Records `backward` only if some parent needs a
  /// gradient and grad mode is enabled.
  static Variable make(Tensor4 value, std::vector<Variable> parents,
                       std::function<void(detail::Node&)> backward);

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Disables tape recording in the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

CHNET_NS_END
