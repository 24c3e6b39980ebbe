#include "rslab/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace rslab {

GradCheckResult grad_check(const std::function<Tensor()>& f, ParamSet& params,
                           const GradCheckOptions& opts) {
  params.zero_grad();
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("grad_check: loss is non-finite");
  loss.backward();

  // Snapshot analytic gradients before the finite-difference probes.
  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, t] : params) {
    Tensor copy = t;
    auto g = copy.grad_mut();
    analytic[name].assign(g.begin(), g.end());
  }

  GradCheckResult result;
  for (auto& [name, t] : params) {
    const auto& ga = analytic[name];
    const std::int64_t n = t.size();

    std::vector<std::int64_t> coords;
    std::int64_t max_i = 0;
    for (std::int64_t i = 1; i < n; ++i)
      if (std::fabs(ga[static_cast<std::size_t>(i)]) > std::fabs(ga[static_cast<std::size_t>(max_i)]))
        max_i = i;
    coords.push_back(max_i);
    SplitMix64 rng(derive_seed(opts.seed, "grad_check:" + name));
    for (int s = 0; s < opts.samples_per_tensor && s < n; ++s)
      coords.push_back(rng.uniform_int(0, n - 1));
    std::sort(coords.begin(), coords.end());
    coords.erase(std::unique(coords.begin(), coords.end()), coords.end());

    Tensor tensor = t;
    auto vals = tensor.values_mut();
    for (std::int64_t i : coords) {
      const double saved = vals[static_cast<std::size_t>(i)];
      vals[static_cast<std::size_t>(i)] = saved + opts.eps;
      const double up = f().item();
      vals[static_cast<std::size_t>(i)] = saved - opts.eps;
      const double down = f().item();
      vals[static_cast<std::size_t>(i)] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite loss while perturbing '" + name + "'");
      const double numeric = (up - down) / (2.0 * opts.eps);
      const double a = ga[static_cast<std::size_t>(i)];
      const double rel =
          std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace rslab
