#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "rslab/param_set.hpp"

namespace rslab {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates sampled per parameter tensor: the coordinate with the
  /// largest analytic gradient plus this many uniformly drawn ones.
  int samples_per_tensor = 6;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Central-difference verification of reverse-mode gradients.
///
/// `f` must rebuild the forward pass from the current parameter values and
/// return the scalar loss; it is re-invoked with individual coordinates
/// perturbed by +/- eps. The reported error per coordinate is
///   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
/// Throws NumericError (naming the parameter) on a non-finite intermediate.
GradCheckResult grad_check(const std::function<Tensor()>& f, ParamSet& params,
                           const GradCheckOptions& opts = {});

}  // namespace rslab
