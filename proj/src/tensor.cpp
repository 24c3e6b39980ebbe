#include "rslab/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace rslab {

namespace {
bool g_debug_checks = false;
}

void set_debug_checks(bool enabled) { g_debug_checks = enabled; }
bool debug_checks_enabled() { return g_debug_checks; }

std::int64_t shape_size(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value.assign(static_cast<std::size_t>(shape_size(shape)), 0.0);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
  Tensor t = zeros(shape, requires_grad);
  std::fill(t.node_->value.begin(), t.node_->value.end(), v);
  return t;
}

Tensor Tensor::from_vector(const Shape& shape, std::vector<double> data, bool requires_grad) {
  if (static_cast<std::int64_t>(data.size()) != shape_size(shape))
    throw DimensionError("data length " + std::to_string(data.size()) + " does not match shape " + shape_str(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = shape;
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from_vector({1}, {v}, requires_grad);
}

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty())
    throw ContractError("gradient of '" + node_->name + "' has not been populated");
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::set_requires_grad(bool flag) {
  if (flag && node_->backward_fn)
    throw ContractError("requires_grad can only be toggled on leaf tensors");
  node_->requires_grad = flag;
}

void Tensor::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::backward() const {
  if (!defined()) throw ContractError("backward() on empty tensor");
  if (size() != 1) throw ContractError("backward() requires a scalar loss, got shape " + shape_str(shape()));
  if (!node_->requires_grad) return;  // loss unreachable from any tracked tensor

  // Iterative post-order DFS; reverse gives topological order from the loss.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  struct Frame {
    detail::Node* n;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  stack.push_back({node_.get(), 0});
  seen.insert(node_.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_input < f.n->inputs.size()) {
      detail::Node* in = f.n->inputs[f.next_input++].get();
      if (in->requires_grad && !seen.count(in)) {
        seen.insert(in);
        stack.push_back({in, 0});
      }
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  // Interior gradients are scratch for this sweep; only leaves accumulate
  // across repeated backward() calls.
  for (detail::Node* n : order) {
    if (n->backward_fn) n->grad.assign(n->value.size(), 0.0);
  }
  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

}  // namespace rslab
