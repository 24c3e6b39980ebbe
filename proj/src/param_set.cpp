#include "rslab/param_set.hpp"

namespace rslab {

Tensor ParamSet::add(const std::string& name, Tensor t) {
  if (params_.count(name)) throw ContractError("parameter '" + name + "' already registered");
  t.set_requires_grad(true);
  t.set_name(name);
  params_.emplace(name, t);
  return t;
}

Tensor ParamSet::add_uniform(const std::string& name, const Shape& shape, double bound,
                             std::uint64_t seed) {
  Tensor t = Tensor::zeros(shape);
  SplitMix64 rng(derive_seed(seed, "init:" + name));
  for (double& v : t.values_mut()) v = rng.uniform(-bound, bound);
  return add(name, t);
}

Tensor ParamSet::add_constant(const std::string& name, const Shape& shape, double v) {
  return add(name, Tensor::full(shape, v));
}

Tensor ParamSet::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

void ParamSet::zero_grad() {
  for (auto& [name, t] : params_) {
    Tensor copy = t;
    copy.zero_grad();
  }
}

std::int64_t ParamSet::total_size() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

}  // namespace rslab
