#include "chnet/autodiff.hpp"

#include <unordered_set>

#include "chnet/errors.hpp"

CHNET_NS_BEGIN

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
  g_grad_enabled = false;
}
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor4& Node::grad_buffer() {
  if (grad.shape() != value.shape() || grad.size() != value.size()) {
    grad = Tensor4(value.shape());
  }
  return grad;
}

void Node::accumulate(const Tensor4& g) {
  if (!requires_grad) return;
  grad_buffer().add_(g);
}

}  // namespace detail

Variable::Variable(Tensor4 value, bool requires_grad)
    : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
  if (requires_grad) node_->grad = Tensor4(node_->value.shape());
}

void Variable::zero_grad() {
  if (node_ && node_->requires_grad) node_->grad_buffer().fill(0);
}

Variable Variable::make(Tensor4 value, std::vector<Variable> parents,
                        std::function<void(detail::Node&)> backward) {
  Variable out;
  out.node_ = std::make_shared<detail::Node>();
  out.node_->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
  }
  return out;
}

void Variable::backward() {
  if (!node_) throw ShapeError("backward on undefined variable");
  if (node_->value.size() != 1) {
    throw ShapeError("backward requires a scalar output, got " +
                     node_->value.shape().str());
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order. The order holds
  // owning pointers because releasing a closure can drop the last reference
  // to an intermediate node.
  std::vector<std::shared_ptr<detail::Node>> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<std::shared_ptr<detail::Node>, std::size_t>> stack;
  stack.emplace_back(node_, 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      std::shared_ptr<detail::Node> p = n->parents[idx++];
      if (p->requires_grad && !visited.count(p.get())) {
        visited.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer().fill(0);
  node_->grad[0] = Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = it->get();
    if (n->backward) {
      n->grad_buffer();
      n->backward(*n);
      // single-use tape
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

CHNET_NS_END
