#pragma once

#include <cstdint>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mirf::kernels {

// Dense f64 kernels. The OpenMP variants parallelize over independent output
// rows only, so they are bit-identical to the serial references at any thread
// count. Tests assert that equivalence; the bench tool compares throughput.

// C[N,M] = A[N,K] * B[K,M]
void matmul_serial(const double* A, const double* B, double* C, int64_t N, int64_t K, int64_t M);
void matmul(const double* A, const double* B, double* C, int64_t N, int64_t K, int64_t M);

// C[N,R] = A[N,M] * B[R,M]^T
void matmul_nt_serial(const double* A, const double* B, double* C, int64_t N, int64_t M, int64_t R);
void matmul_nt(const double* A, const double* B, double* C, int64_t N, int64_t M, int64_t R);

// C[K,M] += A[N,K]^T * B[N,M]
void matmul_tn_acc_serial(const double* A, const double* B, double* C, int64_t N, int64_t K, int64_t M);
void matmul_tn_acc(const double* A, const double* B, double* C, int64_t N, int64_t K, int64_t M);

// C[N,M] += A[N,K] * B[K,M]
void matmul_acc(const double* A, const double* B, double* C, int64_t N, int64_t K, int64_t M);
// C[N,R] += A[N,M] * B[R,M]^T
void matmul_nt_acc(const double* A, const double* B, double* C, int64_t N, int64_t M, int64_t R);

// Runs f(i) for i in [0, n). Parallel items must be independent.
template <class F>
void for_each_index(int64_t n, bool parallel, F&& f) {
    if (parallel) {
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < n; ++i) f(i);
    } else {
        for (int64_t i = 0; i < n; ++i) f(i);
    }
}

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace mirf::kernels
