#include "mirf/kernels.hpp"

#include <algorithm>

namespace mirf::kernels {

namespace {

inline void matmul_row(const double* a, const double* B, double* c, int64_t K, int64_t M) {
    for (int64_t m = 0; m < M; ++m) c[m] = 0.0;
    for (int64_t k = 0; k < K; ++k) {
        const double av = a[k];
        const double* b = B + k * M;
        for (int64_t m = 0; m < M; ++m) c[m] += av * b[m];
    }
}

inline void matmul_nt_row(const double* a, const double* B, double* c, int64_t M, int64_t R) {
    for (int64_t r = 0; r < R; ++r) {
        const double* b = B + r * M;
        double acc = 0.0;
        for (int64_t m = 0; m < M; ++m) acc += a[m] * b[m];
        c[r] = acc;
    }
}

inline void matmul_row_acc(const double* a, const double* B, double* c, int64_t K, int64_t M) {
    for (int64_t k = 0; k < K; ++k) {
        const double av = a[k];
        const double* b = B + k * M;
        for (int64_t m = 0; m < M; ++m) c[m] += av * b[m];
    }
}

inline void matmul_nt_row_acc(const double* a, const double* B, double* c, int64_t M, int64_t R) {
    for (int64_t r = 0; r < R; ++r) {
        const double* b = B + r * M;
        double acc = 0.0;
        for (int64_t m = 0; m < M; ++m) acc += a[m] * b[m];
        c[r] += acc;
    }
}

// C[k0:k1,:] += A^T * B over a row block; outer loop over n keeps the C block
// hot and reads A and B contiguously. The n-order per element is fixed, so
// any block split yields identical bits, and threads write disjoint C rows.
inline void matmul_tn_acc_block(const double* A, const double* B, double* C, int64_t N, int64_t K,
                                int64_t M, int64_t k0, int64_t k1) {
    for (int64_t n = 0; n < N; ++n) {
        const double* a = A + n * K;
        const double* b = B + n * M;
        for (int64_t k = k0; k < k1; ++k) {
            const double av = a[k];
            double* c = C + k * M;
            for (int64_t m = 0; m < M; ++m) c[m] += av * b[m];
        }
    }
}

}  // namespace

void matmul_serial(const double* A, const double* B, double* C, int64_t N, int64_t K, int64_t M) {
    for (int64_t n = 0; n < N; ++n) matmul_row(A + n * K, B, C + n * M, K, M);
}

void matmul(const double* A, const double* B, double* C, int64_t N, int64_t K, int64_t M) {
#pragma omp parallel for schedule(static) if (N > 64)
    for (int64_t n = 0; n < N; ++n) matmul_row(A + n * K, B, C + n * M, K, M);
}

void matmul_nt_serial(const double* A, const double* B, double* C, int64_t N, int64_t M, int64_t R) {
    for (int64_t n = 0; n < N; ++n) matmul_nt_row(A + n * M, B, C + n * R, M, R);
}

void matmul_nt(const double* A, const double* B, double* C, int64_t N, int64_t M, int64_t R) {
#pragma omp parallel for schedule(static) if (N > 64)
    for (int64_t n = 0; n < N; ++n) matmul_nt_row(A + n * M, B, C + n * R, M, R);
}

void matmul_tn_acc_serial(const double* A, const double* B, double* C, int64_t N, int64_t K,
                          int64_t M) {
    matmul_tn_acc_block(A, B, C, N, K, M, 0, K);
}

void matmul_tn_acc(const double* A, const double* B, double* C, int64_t N, int64_t K, int64_t M) {
    const int threads = max_threads();
    const int64_t blocks = std::min<int64_t>(threads, K / 8);
    if (blocks <= 1) {
        matmul_tn_acc_block(A, B, C, N, K, M, 0, K);
        return;
    }
#pragma omp parallel for schedule(static)
    for (int64_t s = 0; s < blocks; ++s)
        matmul_tn_acc_block(A, B, C, N, K, M, s * K / blocks, (s + 1) * K / blocks);
}

void matmul_acc(const double* A, const double* B, double* C, int64_t N, int64_t K, int64_t M) {
#pragma omp parallel for schedule(static) if (N > 64)
    for (int64_t n = 0; n < N; ++n) matmul_row_acc(A + n * K, B, C + n * M, K, M);
}

void matmul_nt_acc(const double* A, const double* B, double* C, int64_t N, int64_t M, int64_t R) {
#pragma omp parallel for schedule(static) if (N > 64)
    for (int64_t n = 0; n < N; ++n) matmul_nt_row_acc(A + n * M, B, C + n * R, M, R);
}

}  // namespace mirf::kernels
