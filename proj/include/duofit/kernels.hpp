#pragma once

// Compute kernels in two implementations: a plain serial reference and an
// OpenMP-parallel version. Elementwise kernels are bit-identical between the
// two (each output element is an independent expression); reductions use a
// fixed chunking scheme so the summation order does not depend on the thread
// count. The matmul fast path goes through BLAS; the serial and OpenMP
// variants are kept as reference implementations and for the benchmark.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

#ifdef DUOFIT_USE_CBLAS
#include <cblas.h>
#endif

namespace duofit::kern {

enum class GemmBackend { Blas, Blocked, Naive };

struct ExecConfig {
    int threads = 1;          // OpenMP thread count for pixel-parallel kernels
    bool deterministic = true; // pins BLAS to one thread (fixed reduction order)
    GemmBackend gemm = GemmBackend::Blas;
};

inline ExecConfig& exec() {
    static ExecConfig cfg;
    return cfg;
}

inline void set_threads(int n) { exec().threads = std::max(1, n); }
inline void set_deterministic(bool on) { exec().deterministic = on; }

// ---- elementwise map / zip ----

template <typename T, typename F>
void map(const T* x, T* out, int64_t n, F f) {
    const int nt = exec().threads;
#ifdef _OPENMP
    if (nt > 1 && n > 4096) {
#pragma omp parallel for num_threads(nt) schedule(static)
        for (int64_t i = 0; i < n; ++i) out[i] = f(x[i]);
        return;
    }
#endif
    (void)nt;
    for (int64_t i = 0; i < n; ++i) out[i] = f(x[i]);
}

template <typename T, typename F>
void zip(const T* a, const T* b, T* out, int64_t n, F f) {
    const int nt = exec().threads;
#ifdef _OPENMP
    if (nt > 1 && n > 4096) {
#pragma omp parallel for num_threads(nt) schedule(static)
        for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
        return;
    }
#endif
    (void)nt;
    for (int64_t i = 0; i < n; ++i) out[i] = f(a[i], b[i]);
}

// ---- reductions ----
//
// Chunked pairwise scheme: per-chunk partial sums accumulated serially, chunk
// results combined in index order. Identical bits for any thread count.

inline constexpr int64_t kReduceChunk = 4096;

template <typename T>
T sum(const T* x, int64_t n) {
    if (n == 0) return T(0);
    const int64_t nchunks = (n + kReduceChunk - 1) / kReduceChunk;
    if (nchunks == 1) {
        T acc(0);
        for (int64_t i = 0; i < n; ++i) acc += x[i];
        return acc;
    }
    std::vector<T> partial(static_cast<size_t>(nchunks), T(0));
    const int nt = exec().threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1)
#endif
    for (int64_t c = 0; c < nchunks; ++c) {
        const int64_t lo = c * kReduceChunk;
        const int64_t hi = std::min(n, lo + kReduceChunk);
        T acc(0);
        for (int64_t i = lo; i < hi; ++i) acc += x[i];
        partial[static_cast<size_t>(c)] = acc;
    }
    (void)nt;
    T total(0);
    for (int64_t c = 0; c < nchunks; ++c) total += partial[static_cast<size_t>(c)];
    return total;
}

// Serial reference for the reduction, kept for the bitwise-equivalence test.
template <typename T>
T sum_serial_reference(const T* x, int64_t n) {
    const int64_t nchunks = (n + kReduceChunk - 1) / kReduceChunk;
    T total(0);
    for (int64_t c = 0; c < nchunks; ++c) {
        const int64_t lo = c * kReduceChunk;
        const int64_t hi = std::min(n, lo + kReduceChunk);
        T acc(0);
        for (int64_t i = lo; i < hi; ++i) acc += x[i];
        total += acc;
    }
    return total;
}

// ---- matmul ----
// C (m x n) = A (m x k) * B (k x n), row-major, accumulate if beta = 1.

template <typename T>
void gemm_naive(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            T acc(0);
            const T* a = A + i * k;
            for (int64_t p = 0; p < k; ++p) acc += a[p] * B[p * n + j];
            T* c = C + i * n + j;
            *c = accumulate ? *c + acc : acc;
        }
    }
}

// Row-parallel blocked version; each output row is produced by one thread with
// a fixed in-row order, so the result matches the serial loop bit for bit.
template <typename T>
void gemm_blocked(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate) {
    const int nt = exec().threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && m > 8)
#endif
    for (int64_t i = 0; i < m; ++i) {
        T* c = C + i * n;
        if (!accumulate)
            for (int64_t j = 0; j < n; ++j) c[j] = T(0);
        const T* a = A + i * k;
        for (int64_t p = 0; p < k; ++p) {
            const T ap = a[p];
            const T* b = B + p * n;
            for (int64_t j = 0; j < n; ++j) c[j] += ap * b[j];
        }
    }
    (void)nt;
}

#ifdef DUOFIT_USE_CBLAS
inline void gemm_blas(const float* A, const float* B, float* C, int64_t m, int64_t k, int64_t n,
                      bool accumulate) {
    openblas_set_num_threads(exec().deterministic ? 1 : exec().threads);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), 1.0f, A, static_cast<int>(k), B, static_cast<int>(n),
                accumulate ? 1.0f : 0.0f, C, static_cast<int>(n));
}
inline void gemm_blas(const double* A, const double* B, double* C, int64_t m, int64_t k, int64_t n,
                      bool accumulate) {
    openblas_set_num_threads(exec().deterministic ? 1 : exec().threads);
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
                static_cast<int>(k), 1.0, A, static_cast<int>(k), B, static_cast<int>(n),
                accumulate ? 1.0 : 0.0, C, static_cast<int>(n));
}
#endif

template <typename T>
void gemm(const T* A, const T* B, T* C, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    switch (exec().gemm) {
        case GemmBackend::Naive:
            gemm_naive(A, B, C, m, k, n, accumulate);
            return;
        case GemmBackend::Blocked:
            gemm_blocked(A, B, C, m, k, n, accumulate);
            return;
        case GemmBackend::Blas:
#ifdef DUOFIT_USE_CBLAS
            gemm_blas(A, B, C, m, k, n, accumulate);
#else
            gemm_blocked(A, B, C, m, k, n, accumulate);
#endif
            return;
    }
}

// Transposed views used by matmul backward: C = A^T * B and C = A * B^T.
// Materializing the transpose keeps every path on the fast row-major gemm.

template <typename T>
void transpose(const T* A, T* At, int64_t rows, int64_t cols) {
    const int nt = exec().threads;
#ifdef _OPENMP
#pragma omp parallel for num_threads(nt) schedule(static) if (nt > 1 && rows * cols > 16384)
#endif
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < cols; ++j) At[j * rows + i] = A[i * cols + j];
    (void)nt;
}

} // namespace duofit::kern
