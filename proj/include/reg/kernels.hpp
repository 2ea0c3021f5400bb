#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <cstddef>
#include <vector>

#include "reg/common.hpp"
#include "reg/linalg.hpp"

// Reverse-mode primitive pairs. Every *_fwd caches exactly what its *_bwd
// needs; backward passes accumulate (+=) into parameter gradients and either
// write or accumulate input gradients as documented per kernel. The denoiser
// composes these by hand; each pair is finite-difference tested on its own.
namespace reg::nn {

// exp via 2^(x log2 e): round to the nearest integer exponent, degree-12
// Taylor on the remaining [-0.5, 0.5] fraction (truncation ~2e-16), scale by
// the exponent bits. Inlineable so activation loops vectorize; relative error
// stays under 3e-14. libm's exp dominates the MLP cost otherwise.
inline double fast_exp(double x) {
    if (x < -708.0) return 0.0;
    if (x > 708.0) return std::numeric_limits<double>::infinity();
    const double log2e = 1.4426950408889634073599246810019;
    const double y = x * log2e;
    const double fi = std::floor(y + 0.5);
    const double f = y - fi;  // in [-0.5, 0.5]
    const double c1 = 6.93147180559945286227e-01;
    const double c2 = 2.40226506959100694072e-01;
    const double c3 = 5.55041086648215761801e-02;
    const double c4 = 9.61812910762847687873e-03;
    const double c5 = 1.33335581464284411157e-03;
    const double c6 = 1.54035303933816060656e-04;
    const double c7 = 1.52527338040598376946e-05;
    const double c8 = 1.32154867901443052734e-06;
    const double c9 = 1.01780860092396959520e-07;
    const double c10 = 7.05491162080112087744e-09;
    const double c11 = 4.44553827187081007394e-10;
    const double c12 = 2.56784359934881958182e-11;
    const double p =
        1.0 +
        f * (c1 +
             f * (c2 +
                  f * (c3 +
                       f * (c4 +
                            f * (c5 +
                                 f * (c6 +
                                      f * (c7 +
                                           f * (c8 +
                                                f * (c9 +
                                                     f * (c10 +
                                                          f * (c11 +
                                                               f * c12)))))))))));
    const std::int64_t e = static_cast<std::int64_t>(fi) + 1023;
    const double scale = std::bit_cast<double>(static_cast<std::uint64_t>(e) << 52);
    return p * scale;
}

// ---------------------------------------------------------------- linear ---
// y[T x dout] = x[T x din] * W[din x dout] + b[dout]
inline void linear_fwd(const double* x, const double* W, const double* b,
                       double* y, std::size_t T, std::size_t din,
                       std::size_t dout) {
    for (std::size_t t = 0; t < T; ++t) {
        double* yr = y + t * dout;
        for (std::size_t j = 0; j < dout; ++j) yr[j] = b[j];
    }
    matmul_acc(x, W, y, T, din, dout);
}

// gx += gy * W^T ; gW += x^T * gy ; gb += colsum(gy)
inline void linear_bwd(const double* gy, const double* x, const double* W,
                       double* gx, double* gW, double* gb, std::size_t T,
                       std::size_t din, std::size_t dout) {
    if (gx) matmul_nt_acc(gy, W, gx, T, dout, din);
    matmul_tn_acc(x, gy, gW, T, din, dout);
    for (std::size_t t = 0; t < T; ++t) {
        const double* g = gy + t * dout;
        for (std::size_t j = 0; j < dout; ++j) gb[j] += g[j];
    }
}

// ------------------------------------------------------------- layernorm ---
// Row-wise layer norm without affine parameters (scale/shift come from the
// adaLN modulation). Caches mean and reciprocal std per row.
inline void layernorm_fwd(const double* x, double* y, double* mean,
                          double* rstd, std::size_t T, std::size_t D,
                          double eps = 1e-6) {
    for (std::size_t t = 0; t < T; ++t) {
        const double* xr = x + t * D;
        double mu = 0.0;
        for (std::size_t j = 0; j < D; ++j) mu += xr[j];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            const double c = xr[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(D);
        const double rs = 1.0 / std::sqrt(var + eps);
        mean[t] = mu;
        rstd[t] = rs;
        double* yr = y + t * D;
        for (std::size_t j = 0; j < D; ++j) yr[j] = (xr[j] - mu) * rs;
    }
}

// gx += dL/dx given cached mean/rstd.
inline void layernorm_bwd(const double* gy, const double* x,
                          const double* mean, const double* rstd, double* gx,
                          std::size_t T, std::size_t D) {
    for (std::size_t t = 0; t < T; ++t) {
        const double* g = gy + t * D;
        const double* xr = x + t * D;
        double* gxr = gx + t * D;
        const double mu = mean[t];
        const double rs = rstd[t];
        double gsum = 0.0, gdot = 0.0;
        for (std::size_t j = 0; j < D; ++j) {
            gsum += g[j];
            gdot += g[j] * (xr[j] - mu) * rs;
        }
        const double invD = 1.0 / static_cast<double>(D);
        for (std::size_t j = 0; j < D; ++j) {
            const double xhat = (xr[j] - mu) * rs;
            gxr[j] += rs * (g[j] - invD * gsum - invD * xhat * gdot);
        }
    }
}

// ------------------------------------------------------------ activations ---
inline void silu_fwd(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + fast_exp(-x[i]));
        y[i] = x[i] * s;
    }
}

// gx += gy * silu'(x)
inline void silu_bwd(const double* gy, const double* x, double* gx,
                     std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        const double s = 1.0 / (1.0 + fast_exp(-x[i]));
        gx[i] += gy[i] * s * (1.0 + x[i] * (1.0 - s));
    }
}

inline void tanh_fwd(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

// gx += gy * (1 - tanh(x)^2); takes the cached forward output y.
inline void tanh_bwd(const double* gy, const double* y, double* gx,
                     std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) gx[i] += gy[i] * (1.0 - y[i] * y[i]);
}

// -------------------------------------------------------------- modulate ---
// y = h .* (1 + gamma) + beta, gamma/beta broadcast over rows.
inline void modulate_fwd(const double* h, const double* gamma,
                         const double* beta, double* y, std::size_t T,
                         std::size_t D) {
    for (std::size_t t = 0; t < T; ++t) {
        const double* hr = h + t * D;
        double* yr = y + t * D;
        for (std::size_t j = 0; j < D; ++j)
            yr[j] = hr[j] * (1.0 + gamma[j]) + beta[j];
    }
}

// gh += gy .* (1+gamma); ggamma += sum_rows gy .* h; gbeta += sum_rows gy
inline void modulate_bwd(const double* gy, const double* h, const double* gamma,
                         double* gh, double* ggamma, double* gbeta,
                         std::size_t T, std::size_t D) {
    for (std::size_t t = 0; t < T; ++t) {
        const double* g = gy + t * D;
        const double* hr = h + t * D;
        double* ghr = gh + t * D;
        for (std::size_t j = 0; j < D; ++j) {
            ghr[j] += g[j] * (1.0 + gamma[j]);
            ggamma[j] += g[j] * hr[j];
            gbeta[j] += g[j];
        }
    }
}

// y = x + gate .* u (gated residual), gate broadcast over rows.
inline void gated_residual_fwd(const double* x, const double* gate,
                               const double* u, double* y, std::size_t T,
                               std::size_t D) {
    for (std::size_t t = 0; t < T; ++t) {
        const double* xr = x + t * D;
        const double* ur = u + t * D;
        double* yr = y + t * D;
        for (std::size_t j = 0; j < D; ++j) yr[j] = xr[j] + gate[j] * ur[j];
    }
}

// gx += gy; gu += gy .* gate; ggate += sum_rows gy .* u
inline void gated_residual_bwd(const double* gy, const double* gate,
                               const double* u, double* gx, double* gu,
                               double* ggate, std::size_t T, std::size_t D) {
    for (std::size_t t = 0; t < T; ++t) {
        const double* g = gy + t * D;
        const double* ur = u + t * D;
        double* gxr = gx + t * D;
        double* gur = gu + t * D;
        for (std::size_t j = 0; j < D; ++j) {
            gxr[j] += g[j];
            gur[j] += g[j] * gate[j];
            ggate[j] += g[j] * ur[j];
        }
    }
}

// ------------------------------------------------------------- attention ---
// Multi-head softmax attention over q,k,v in [T x D] with D = heads * hd;
// head h occupies columns [h*hd, (h+1)*hd). probs caches the [heads x T x T]
// attention matrix for backward. No mask: the sequence is a set of patches
// plus one class-token slot.
inline void attention_fwd(const double* q, const double* k, const double* v,
                          double* out, double* probs, std::size_t T,
                          std::size_t heads, std::size_t hd) {
    const std::size_t D = heads * hd;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        double* P = probs + h * T * T;
        for (std::size_t i = 0; i < T; ++i) {
            const double* qi = q + i * D + off;
            double* Pi = P + i * T;
            double mx = -1e300;
            for (std::size_t j = 0; j < T; ++j) {
                Pi[j] = scale * dot(qi, k + j * D + off, hd);
                if (Pi[j] > mx) mx = Pi[j];
            }
            double z = 0.0;
            for (std::size_t j = 0; j < T; ++j) {
                Pi[j] = fast_exp(Pi[j] - mx);
                z += Pi[j];
            }
            const double invz = 1.0 / z;
            for (std::size_t j = 0; j < T; ++j) Pi[j] *= invz;
            double* oi = out + i * D + off;
            for (std::size_t d = 0; d < hd; ++d) oi[d] = 0.0;
            for (std::size_t j = 0; j < T; ++j)
                axpy(Pi[j], v + j * D + off, oi, hd);
        }
    }
}

// gq/gk/gv += gradients; probs is the cached forward attention matrix.
inline void attention_bwd(const double* gout, const double* q, const double* k,
                          const double* v, const double* probs, double* gq,
                          double* gk, double* gv, std::size_t T,
                          std::size_t heads, std::size_t hd) {
    const std::size_t D = heads * hd;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> ga(T);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        const double* P = probs + h * T * T;
        for (std::size_t i = 0; i < T; ++i) {
            const double* gi = gout + i * D + off;
            const double* Pi = P + i * T;
            // d/d probs and v
            for (std::size_t j = 0; j < T; ++j) {
                ga[j] = dot(gi, v + j * D + off, hd);
                axpy(Pi[j], gi, gv + j * D + off, hd);
            }
            // softmax backward
            double inner = 0.0;
            for (std::size_t j = 0; j < T; ++j) inner += Pi[j] * ga[j];
            // scores backward into q and k
            double* gqi = gq + i * D + off;
            for (std::size_t j = 0; j < T; ++j) {
                const double gs = scale * Pi[j] * (ga[j] - inner);
                axpy(gs, k + j * D + off, gqi, hd);
                axpy(gs, q + i * D + off, gk + j * D + off, hd);
            }
        }
    }
}

// ------------------------------------------------------------ reductions ---
// Mean squared error over all n elements; returns the value, writes
// d/da = 2(a-b)/n scaled by wgrad into ga (accumulating) when ga != nullptr.
inline double mse(const double* a, const double* b, std::size_t n, double* ga,
                  double wgrad = 1.0) {
    double acc = 0.0;
    const double invn = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
        if (ga) ga[i] += wgrad * 2.0 * d * invn;
    }
    return acc * invn;
}

// Cosine similarity of two vectors; zero-norm inputs yield 0 (caller counts
// them). If ga != nullptr, accumulates wgrad * d cos / d a; the gradient is
// orthogonal to a by construction.
inline double cosine(const double* a, const double* b, std::size_t n,
                     double* ga = nullptr, double wgrad = 1.0,
                     bool* degenerate = nullptr) {
    const double na = norm2(a, n);
    const double nb = norm2(b, n);
    if (na == 0.0 || nb == 0.0) {
        if (degenerate) *degenerate = true;
        return 0.0;
    }
    if (degenerate) *degenerate = false;
    const double c = dot(a, b, n) / (na * nb);
    if (ga) {
        const double inv_ab = 1.0 / (na * nb);
        const double inv_aa = c / (na * na);
        for (std::size_t i = 0; i < n; ++i)
            ga[i] += wgrad * (b[i] * inv_ab - a[i] * inv_aa);
    }
    return c;
}

// Sinusoidal features of a scalar (timestep embedding input): pairs of
// sin/cos at geometrically spaced frequencies.
inline void sincos_features(double t, double* out, std::size_t dim,
                            double max_period = 1e4) {
    const std::size_t half = dim / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq =
            std::exp(-std::log(max_period) * static_cast<double>(i) /
                     static_cast<double>(half));
        out[i] = std::cos(t * freq * 1000.0);
        out[half + i] = std::sin(t * freq * 1000.0);
    }
    if (dim % 2) out[dim - 1] = 0.0;
}

}  // namespace reg::nn
