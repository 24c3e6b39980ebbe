#pragma once

#include <cmath>
#include <vector>

#include "rslab/rng.hpp"
#include "rslab/tensor.hpp"

namespace rstest {

inline rslab::Tensor random_tensor(const rslab::Shape& shape, std::uint64_t seed, double bound = 1.0,
                                   bool requires_grad = false) {
  rslab::Tensor t = rslab::Tensor::zeros(shape, requires_grad);
  rslab::SplitMix64 rng(seed);
  for (double& v : t.values_mut()) v = rng.uniform(-bound, bound);
  return t;
}

// Independent brute-force oracles. These must stay free of the library's
// gemm/im2col paths so they can catch errors there.

inline std::vector<double> matmul_triple_loop(const std::vector<double>& a,
                                              const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l)
        c[static_cast<std::size_t>(i) * n + j] +=
            a[static_cast<std::size_t>(i) * k + l] * b[static_cast<std::size_t>(l) * n + j];
  return c;
}

// Cross-correlation with six explicit loops; input [Ci,H,W], kernel [Co,Ci,k,k].
inline std::vector<double> conv_naive(const std::vector<double>& x, const std::vector<double>& w,
                                      int ci, int h, int wd, int co, int k, int stride, int pad) {
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(co) * ho * wo, 0.0);
  for (int oc = 0; oc < co; ++oc)
    for (int y = 0; y < ho; ++y)
      for (int x0 = 0; x0 < wo; ++x0) {
        double acc = 0.0;
        for (int ic = 0; ic < ci; ++ic)
          for (int u = 0; u < k; ++u)
            for (int v = 0; v < k; ++v) {
              const int iy = y * stride + u - pad;
              const int ix = x0 * stride + v - pad;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += x[(static_cast<std::size_t>(ic) * h + iy) * wd + ix] *
                     w[((static_cast<std::size_t>(oc) * ci + ic) * k + u) * k + v];
            }
        out[(static_cast<std::size_t>(oc) * ho + y) * wo + x0] = acc;
      }
  return out;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace rstest
