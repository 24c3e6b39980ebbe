#pragma once

#include <cstdint>

namespace rslab::detail {

// Row-major double-precision matrix kernels. `accumulate` adds into C
// instead of overwriting. These carry the bulk of the training compute.

/// C[m,n] = A[m,k] * B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate);

/// C[m,n] = A[m,k] * B[n,k]^T  (rows of A dotted with rows of B)
void gemm_nt(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate);

/// C[m,n] = A[k,m]^T * B[k,n]
void gemm_tn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n, bool accumulate);

}  // namespace rslab::detail
