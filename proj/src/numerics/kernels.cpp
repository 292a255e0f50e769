#include "kernels.hpp"

#include <algorithm>
#include <vector>

#include "segvggt/numerics/parallel.hpp"

namespace segvggt::numerics::kernels {

namespace {

// Rows [row_begin, row_end) of c = a * b. Four output rows share each load of
// a b row; the inner loop is contiguous and vectorizes.
void gemm_nn_rows(std::size_t row_begin, std::size_t row_end, std::size_t n, std::size_t k,
                  const double* __restrict a, const double* __restrict b, double* __restrict c,
                  bool accumulate) {
  std::size_t i = row_begin;
  for (; i + 4 <= row_end; i += 4) {
    double* __restrict c0 = c + i * n;
    double* __restrict c1 = c0 + n;
    double* __restrict c2 = c1 + n;
    double* __restrict c3 = c2 + n;
    if (!accumulate) {
      std::fill(c0, c0 + 4 * n, 0.0);
    }
    const double* a0 = a + i * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* __restrict bp = b + p * n;
      const double x0 = a0[p], x1 = a1[p], x2 = a2[p], x3 = a3[p];
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = bp[j];
        c0[j] += x0 * bv;
        c1[j] += x1 * bv;
        c2[j] += x2 * bv;
        c3[j] += x3 * bv;
      }
    }
  }
  for (; i < row_end; ++i) {
    double* __restrict ci = c + i * n;
    if (!accumulate) std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* __restrict bp = b + p * n;
      const double x = ai[p];
      for (std::size_t j = 0; j < n; ++j) ci[j] += x * bp[j];
    }
  }
}

constexpr std::size_t kParallelWork = 1 << 18;

}  // namespace

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  const std::size_t per_row = std::max<std::size_t>(1, n * k);
  const std::size_t min_rows = std::max<std::size_t>(4, kParallelWork / per_row);
  parallel_for(m, min_rows, [&](std::size_t begin, std::size_t end) {
    gemm_nn_rows(begin, end, n, k, a, b, c, accumulate);
  });
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> bt(n * k);
  transpose(n, k, b, bt.data());
  gemm_nn(m, n, k, a, bt.data(), c, accumulate);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
             double* c, bool accumulate) {
  std::vector<double> at(m * k);
  transpose(k, m, a, at.data());
  gemm_nn(m, n, k, at.data(), b, c, accumulate);
}

void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t kBlock = 32;
  for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
    const std::size_t r1 = std::min(rows, r0 + kBlock);
    for (std::size_t c0 = 0; c0 < cols; c0 += kBlock) {
      const std::size_t c1 = std::min(cols, c0 + kBlock);
      for (std::size_t r = r0; r < r1; ++r) {
        for (std::size_t col = c0; col < c1; ++col) out[col * rows + r] = in[r * cols + col];
      }
    }
  }
}

}  // namespace segvggt::numerics::kernels
