#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rslab/error.hpp"

namespace rslab {

using Shape = std::vector<int>;

std::int64_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

/// One value in the computation graph. Ops allocate a Node per result and
/// attach a closure that scatters the node's gradient into its inputs.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on first use, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;  // empty for leaves
  std::string name;                        // set for parameters

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense double-precision tensor with optional gradient tracking. A Tensor is
/// a cheap handle to a graph node; copies share the node. The tape is implied
/// by the input edges between nodes, so backward() needs no global state.
///
/// Contract: repeated backward() calls without zero_grad() accumulate into
/// existing gradients.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, double v, bool requires_grad = false);
  static Tensor from_vector(const Shape& shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t size() const { return node_->size(); }

  std::span<const double> values() const { return node_->value; }
  /// Mutable access to a leaf's storage (parameter init, in-place updates).
  /// Mutating an interior node would desynchronize the tape.
  std::span<double> values_mut() { return node_->value; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> grad_mut();

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag);
  void zero_grad();

  double item() const;
  double at(std::int64_t i) const { return node_->value[static_cast<std::size_t>(i)]; }

  const std::string& name() const { return node_->name; }
  void set_name(std::string n) { node_->name = std::move(n); }

  /// Reverse-mode sweep from a scalar: populates grad of every reachable
  /// tensor with requires_grad. Throws ContractError on non-scalar loss.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Debug validation mode: when enabled, every op output is scanned for
/// NaN/Inf and a NumericError naming the op is thrown on the first hit.
void set_debug_checks(bool enabled);
bool debug_checks_enabled();

}  // namespace rslab
