#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "rslab/rng.hpp"
#include "rslab/tensor.hpp"

namespace rslab {

/// Named trainable tensors. Names are unique; iteration order is the
/// lexicographic order of std::map, so reductions over parameters are
/// deterministic.
class ParamSet {
 public:
  /// Registers a tensor; requires_grad is forced on and the tensor is named.
  Tensor add(const std::string& name, Tensor t);

  /// New leaf initialized uniformly in [-bound, bound] from a per-name seed.
  Tensor add_uniform(const std::string& name, const Shape& shape, double bound, std::uint64_t seed);

  /// New leaf filled with a constant.
  Tensor add_constant(const std::string& name, const Shape& shape, double v);

  bool has(const std::string& name) const { return params_.count(name) > 0; }
  Tensor get(const std::string& name) const;

  void zero_grad();
  std::int64_t total_size() const;
  std::size_t count() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::map<std::string, Tensor> params_;
};

}  // namespace rslab
