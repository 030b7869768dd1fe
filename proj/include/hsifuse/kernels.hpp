#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

// Row-major GEMM kernels. Loop orders keep the innermost loop contiguous so
// the compiler vectorizes it; summation order is fixed, which keeps results
// bitwise reproducible.
namespace hsifuse::kernels {

/// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(T* C, const T* A, const T* B, int64_t M, int64_t K, int64_t N, bool accumulate) {
    if (!accumulate) std::fill(C, C + M * N, T(0));
    int64_t i = 0;
    // four rows at a time: each B row is loaded once per block
    for (; i + 4 <= M; i += 4) {
        T* c0 = C + i * N;
        T* c1 = c0 + N;
        T* c2 = c1 + N;
        T* c3 = c2 + N;
        const T* a0 = A + i * K;
        for (int64_t p = 0; p < K; ++p) {
            const T v0 = a0[p], v1 = a0[K + p], v2 = a0[2 * K + p], v3 = a0[3 * K + p];
            if (v0 == T(0) && v1 == T(0) && v2 == T(0) && v3 == T(0)) continue;
            const T* b = B + p * N;
            for (int64_t j = 0; j < N; ++j) {
                const T bj = b[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < M; ++i) {
        T* c = C + i * N;
        const T* a = A + i * K;
        for (int64_t p = 0; p < K; ++p) {
            const T av = a[p];
            if (av == T(0)) continue;
            const T* b = B + p * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

/// C[M,N] (+)= A[K,M]^T * B[K,N]
template <class T>
void gemm_tn(T* C, const T* A, const T* B, int64_t M, int64_t K, int64_t N, bool accumulate) {
    if (!accumulate) std::fill(C, C + M * N, T(0));
    int64_t i = 0;
    for (; i + 4 <= M; i += 4) {
        T* c0 = C + i * N;
        T* c1 = c0 + N;
        T* c2 = c1 + N;
        T* c3 = c2 + N;
        for (int64_t p = 0; p < K; ++p) {
            const T* a = A + p * M + i;
            const T v0 = a[0], v1 = a[1], v2 = a[2], v3 = a[3];
            if (v0 == T(0) && v1 == T(0) && v2 == T(0) && v3 == T(0)) continue;
            const T* b = B + p * N;
            for (int64_t j = 0; j < N; ++j) {
                const T bj = b[j];
                c0[j] += v0 * bj;
                c1[j] += v1 * bj;
                c2[j] += v2 * bj;
                c3[j] += v3 * bj;
            }
        }
    }
    for (; i < M; ++i) {
        T* c = C + i * N;
        for (int64_t p = 0; p < K; ++p) {
            const T av = A[p * M + i];
            if (av == T(0)) continue;
            const T* b = B + p * N;
            for (int64_t j = 0; j < N; ++j) c[j] += av * b[j];
        }
    }
}

/// C[M,N] (+)= A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(T* C, const T* A, const T* B, int64_t M, int64_t K, int64_t N, bool accumulate) {
    std::vector<T> bt(static_cast<size_t>(K * N));
    for (int64_t j = 0; j < N; ++j)
        for (int64_t p = 0; p < K; ++p) bt[static_cast<size_t>(p * N + j)] = B[j * K + p];
    gemm_nn(C, A, bt.data(), M, K, N, accumulate);
}

}  // namespace hsifuse::kernels
