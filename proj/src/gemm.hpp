#pragma once

#include <cstddef>
#include <vector>

namespace ugdd::detail {

// Row-major accumulating kernels: C[M x N] += op(A) * op(B).

// A is M x K, B is K x N.
inline void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                    double* C) {
  for (std::size_t i = 0; i < M; ++i) {
    double* c = C + i * N;
    const double* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
      const double av = a[k];
      const double* b = B + k * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

// A is M x K, B is N x K. B is transposed into scratch so the inner loop
// runs over contiguous output columns.
inline void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                    double* C) {
  std::vector<double> bt(K * N);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t k = 0; k < K; ++k) bt[k * N + j] = B[j * K + k];
  gemm_nn(M, N, K, A, bt.data(), C);
}

// A is K x M, B is K x N.
inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* A, const double* B,
                    double* C) {
  for (std::size_t k = 0; k < K; ++k) {
    const double* a = A + k * M;
    const double* b = B + k * N;
    for (std::size_t i = 0; i < M; ++i) {
      const double av = a[i];
      double* c = C + i * N;
      for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace ugdd::detail
