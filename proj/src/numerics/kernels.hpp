#pragma once

#include <cstddef>

// Dense row-major kernels shared by the matmul-family ops.

namespace segvggt::numerics::kernels {

/// c[m x n] (+)= a[m x k] * b[k x n]
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
/// c[m x n] (+)= a[m x k] * b[n x k]^T
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);
/// c[m x n] (+)= a[k x m]^T * b[k x n]
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate);

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out);

}  // namespace segvggt::numerics::kernels
