#pragma once

#include <cstddef>
#include <vector>

// Dense row-major products. All kernels accumulate into `c`.
namespace sne::ad::kernels {

// c[m x n] += a[m x k] * b[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// c[m x n] += a[k x m]^T * b[k x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
    }
  }
}

inline void transpose(const double* a, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
}

// c[m x n] += a[m x k] * b[n x k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  std::vector<double> bt(k * n);
  transpose(b, bt.data(), n, k);
  gemm_nn(a, bt.data(), c, m, k, n);
}

}  // namespace sne::ad::kernels
