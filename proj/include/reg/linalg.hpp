#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "reg/common.hpp"

namespace reg {

using Vec = std::vector<double>;

// Dense row-major kernels sized for this project's shapes (tens to a few
// hundred per side); the k-outer / j-inner ordering streams B rows and lets
// the compiler vectorize the inner loop.

// C[m x n] += A[m x k] * B[k x n]
inline void matmul_acc(const double* A, const double* B, double* C,
                       std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        double* c = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p];
            const double* b = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// C[m x n] += A[m x k] * B^T where B is [n x k]. Transposing B once and
// running the streaming kernel beats per-pair dot products by ~4x at these
// shapes; the transpose is O(kn) against the O(mkn) multiply.
inline void matmul_nt_acc(const double* A, const double* B, double* C,
                          std::size_t m, std::size_t k, std::size_t n) {
    static thread_local std::vector<double> bt;
    bt.resize(k * n);
    constexpr std::size_t TB = 16;  // tiled transpose keeps both sides cached
    for (std::size_t j0 = 0; j0 < n; j0 += TB)
        for (std::size_t p0 = 0; p0 < k; p0 += TB) {
            const std::size_t j1 = std::min(j0 + TB, n);
            const std::size_t p1 = std::min(p0 + TB, k);
            for (std::size_t j = j0; j < j1; ++j)
                for (std::size_t p = p0; p < p1; ++p) bt[p * n + j] = B[j * k + p];
        }
    matmul_acc(A, bt.data(), C, m, k, n);
}

// C[k x n] += A^T * B where A is [m x k], B is [m x n]
inline void matmul_tn_acc(const double* A, const double* B, double* C,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* a = A + i * k;
        const double* b = B + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p];
            double* c = C + p * n;
            for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
        }
    }
}

// Eight independent accumulator chains keep the FMA pipeline full; a single
// chain is latency-bound and runs ~4x slower on these dot-heavy backward
// passes.
inline double dot(const double* a, const double* b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    double s4 = 0.0, s5 = 0.0, s6 = 0.0, s7 = 0.0;
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return ((s0 + s1) + (s2 + s3)) + ((s4 + s5) + (s6 + s7));
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

inline double norm2(const double* a, std::size_t n) {
    return std::sqrt(dot(a, a, n));
}

// Cyclic Jacobi eigendecomposition of a symmetric matrix. A is n x n
// row-major; on return evals holds eigenvalues and V the eigenvectors in
// columns (V[i*n+j] = component i of eigenvector j). Plenty for the n <= 128
// covariance matrices used here.
inline void sym_eig(const Vec& A_in, std::size_t n, Vec& evals, Vec& V) {
    require_shape(A_in.size() == n * n, "sym_eig: matrix size mismatch");
    Vec A = A_in;
    V.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) V[i * n + i] = 1.0;

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += A[p * n + q] * A[p * n + q];
        if (off < 1e-26) break;

        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A[p * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = A[p * n + p];
                const double aqq = A[q * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (std::size_t i = 0; i < n; ++i) {
                    const double aip = A[i * n + p];
                    const double aiq = A[i * n + q];
                    A[i * n + p] = c * aip - s * aiq;
                    A[i * n + q] = s * aip + c * aiq;
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const double apj = A[p * n + j];
                    const double aqj = A[q * n + j];
                    A[p * n + j] = c * apj - s * aqj;
                    A[q * n + j] = s * apj + c * aqj;
                }
                for (std::size_t i = 0; i < n; ++i) {
                    const double vip = V[i * n + p];
                    const double viq = V[i * n + q];
                    V[i * n + p] = c * vip - s * viq;
                    V[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    evals.resize(n);
    for (std::size_t i = 0; i < n; ++i) evals[i] = A[i * n + i];
}

}  // namespace reg
