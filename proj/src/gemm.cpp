#include "rslab/gemm.hpp"

#include <cstring>

#include "rslab/threads.hpp"

namespace rslab::detail {

void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate) {
  parallel_for(m, [=](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      double* ci = c + i * n;
      if (!accumulate) std::memset(ci, 0, static_cast<std::size_t>(n) * sizeof(double));
      const double* ai = a + i * k;
      for (std::int64_t l = 0; l < k; ++l) {
        const double av = ai[l];
        if (av == 0.0) continue;
        const double* bl = b + l * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bl[j];
      }
    }
  });
}

void gemm_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate) {
  parallel_for(m, [=](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i) {
      const double* ai = a + i * k;
      double* ci = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) {
        const double* bj = b + j * k;
        double acc = 0.0;
        for (std::int64_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
        ci[j] = accumulate ? ci[j] + acc : acc;
      }
    }
  });
}

void gemm_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate) {
  if (!accumulate) std::memset(c, 0, static_cast<std::size_t>(m * n) * sizeof(double));
  for (std::int64_t l = 0; l < k; ++l) {
    const double* al = a + l * m;
    const double* bl = b + l * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double av = al[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

}  // namespace rslab::detail
