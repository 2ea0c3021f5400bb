#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "reg/common.hpp"
#include "reg/rng.hpp"
#include "reg/schedule.hpp"

namespace reg {

// Labeled Gaussian-mixture latent world. Each class owns one or more
// components N(mu_k, std^2 I) in the flattened C*C*L latent space; means are
// drawn once from a seeded unit ball and rescaled so every pair is at least
// 4*std apart, which keeps modes distinguishable for coverage tests.
struct MixtureSpec {
    int num_classes = 8;
    int components_per_class = 1;
    int grid = 4;      // C: patch-grid side
    int channels = 2;  // L: channels per cell
    double component_std = 0.15;
    std::uint64_t seed = 17;
    std::vector<double> means;  // [num_components() x latent_dim()]

    int latent_dim() const { return grid * grid * channels; }
    int num_components() const { return num_classes * components_per_class; }
    int class_of_component(int c) const { return c / components_per_class; }

    std::span<const double> mean(int c) const {
        return {means.data() + static_cast<std::size_t>(c) * latent_dim(),
                static_cast<std::size_t>(latent_dim())};
    }
};

inline MixtureSpec make_mixture_spec(int num_classes, int components_per_class,
                                     int grid, int channels,
                                     double component_std, std::uint64_t seed) {
    MixtureSpec spec;
    spec.num_classes = num_classes;
    spec.components_per_class = components_per_class;
    spec.grid = grid;
    spec.channels = channels;
    spec.component_std = component_std;
    spec.seed = seed;

    const int d = spec.latent_dim();
    const int K = spec.num_components();
    spec.means.resize(static_cast<std::size_t>(K) * d);
    Rng rng = substream(seed, stream_tag::init, 0xbeef);

    // Uniform draws in the unit ball: Gaussian direction, radius ~ u^{1/d}.
    for (int c = 0; c < K; ++c) {
        double* m = spec.means.data() + static_cast<std::size_t>(c) * d;
        double n2 = 0.0;
        for (int i = 0; i < d; ++i) {
            m[i] = rng.normal();
            n2 += m[i] * m[i];
        }
        const double r = std::pow(rng.uniform(), 1.0 / d) / std::sqrt(n2);
        for (int i = 0; i < d; ++i) m[i] *= r;
    }

    if (K > 1) {
        double min_dist = std::numeric_limits<double>::infinity();
        for (int a = 0; a < K; ++a)
            for (int b = a + 1; b < K; ++b) {
                double d2 = 0.0;
                for (int i = 0; i < d; ++i) {
                    const double diff = spec.means[static_cast<std::size_t>(a) * d + i] -
                                        spec.means[static_cast<std::size_t>(b) * d + i];
                    d2 += diff * diff;
                }
                min_dist = std::min(min_dist, std::sqrt(d2));
            }
        const double need = 4.0 * component_std;
        if (min_dist < need) {
            const double scale = 1.05 * need / min_dist;
            for (auto& v : spec.means) v *= scale;
        }
    }
    return spec;
}

// The default desk world: 8 classes, 4x4 grid, 2 channels (32-dim latents).
inline MixtureSpec default_desk_spec() {
    return make_mixture_spec(8, 1, 4, 2, 0.15, 17);
}

struct SampleBatch {
    int batch = 0;
    int latent_dim = 0;
    std::vector<double> z0;     // [batch x latent_dim]
    std::vector<int> label;     // [batch]
    std::vector<int> component; // [batch]

    std::span<const double> row(int i) const {
        return {z0.data() + static_cast<std::size_t>(i) * latent_dim,
                static_cast<std::size_t>(latent_dim)};
    }
};

inline SampleBatch sample_batch(const MixtureSpec& spec, int batch, Rng& rng) {
    require_domain(batch >= 1, "sample_batch: batch must be >= 1");
    SampleBatch out;
    out.batch = batch;
    out.latent_dim = spec.latent_dim();
    out.z0.resize(static_cast<std::size_t>(batch) * out.latent_dim);
    out.label.resize(batch);
    out.component.resize(batch);
    const int K = spec.num_components();
    for (int i = 0; i < batch; ++i) {
        const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(K)));
        out.component[i] = c;
        out.label[i] = spec.class_of_component(c);
        const double* mu = spec.means.data() + static_cast<std::size_t>(c) * out.latent_dim;
        double* z = out.z0.data() + static_cast<std::size_t>(i) * out.latent_dim;
        for (int j = 0; j < out.latent_dim; ++j)
            z[j] = mu[j] + spec.component_std * rng.normal();
    }
    return out;
}

namespace detail {

// Log responsibilities of the mixture marginal at time t over a component
// subset, computed with max-subtraction: as t -> 0 the posterior becomes
// near-one-hot and the unnormalized weights underflow.
inline void log_responsibilities(std::span<const double> x, double t,
                                 const MixtureSpec& spec, const Schedule& sched,
                                 int comp_begin, int comp_end,
                                 std::vector<double>& logw) {
    const int d = spec.latent_dim();
    require_shape(static_cast<int>(x.size()) == d,
                  "oracle: latent dim mismatch");
    const double a = sched.alpha(t);
    const double s2 = spec.component_std * spec.component_std;
    const double sig = sched.sigma(t);
    const double c_t = a * a * s2 + sig * sig;  // marginal component variance
    require_domain(c_t > 0.0, "oracle: degenerate marginal at t=0 with std=0");

    logw.resize(comp_end - comp_begin);
    for (int c = comp_begin; c < comp_end; ++c) {
        auto mu = spec.mean(c);
        double d2 = 0.0;
        for (int i = 0; i < d; ++i) {
            const double diff = x[i] - a * mu[i];
            d2 += diff * diff;
        }
        logw[c - comp_begin] = -0.5 * d2 / c_t;  // uniform prior, constant dropped
    }
    const double mx = *std::max_element(logw.begin(), logw.end());
    double z = 0.0;
    for (auto& v : logw) z += std::exp(v - mx);
    const double logz = mx + std::log(z);
    for (auto& v : logw) v -= logz;
}

}  // namespace detail

// log p_t(x) of the closed-form mixture marginal (component subset optional;
// subset = one class gives the class-conditional marginal).
inline double oracle_log_density(std::span<const double> x, double t,
                                 const MixtureSpec& spec, const Schedule& sched,
                                 int comp_begin = 0, int comp_end = -1) {
    if (comp_end < 0) comp_end = spec.num_components();
    const int d = spec.latent_dim();
    require_shape(static_cast<int>(x.size()) == d, "oracle: latent dim mismatch");
    const double a = sched.alpha(t);
    const double s2 = spec.component_std * spec.component_std;
    const double sig = sched.sigma(t);
    const double c_t = a * a * s2 + sig * sig;
    require_domain(c_t > 0.0, "oracle: degenerate marginal");

    const int K = comp_end - comp_begin;
    std::vector<double> logp(K);
    const double log_norm = -0.5 * d * std::log(6.283185307179586 * c_t);
    for (int c = comp_begin; c < comp_end; ++c) {
        auto mu = spec.mean(c);
        double d2 = 0.0;
        for (int i = 0; i < d; ++i) {
            const double diff = x[i] - a * mu[i];
            d2 += diff * diff;
        }
        logp[c - comp_begin] = log_norm - 0.5 * d2 / c_t - std::log(static_cast<double>(K));
    }
    const double mx = *std::max_element(logp.begin(), logp.end());
    double z = 0.0;
    for (double v : logp) z += std::exp(v - mx);
    return mx + std::log(z);
}

// E[x0 | x_t = x] under the mixture, then the velocity
//   v = alpha_dot E[x0|x] + sigma_dot E[eps|x],
// with E[eps|x] recovered from x = alpha E[x0|x] + sigma E[eps|x].
// Valid on all of [0,1]; at t=1 the posterior mean degenerates to the prior
// mean and at t=0 (sigma=0) E[eps|x] = 0.
inline void oracle_velocity(std::span<const double> x, double t,
                            const MixtureSpec& spec, const Schedule& sched,
                            std::span<double> out, int comp_begin = 0,
                            int comp_end = -1) {
    if (comp_end < 0) comp_end = spec.num_components();
    const int d = spec.latent_dim();
    require_shape(static_cast<int>(out.size()) == d, "oracle_velocity: out size");
    const double a = sched.alpha(t);
    const double sig = sched.sigma(t);
    const double s2 = spec.component_std * spec.component_std;
    const double c_t = a * a * s2 + sig * sig;

    std::vector<double> logw;
    detail::log_responsibilities(x, t, spec, sched, comp_begin, comp_end, logw);

    // Per component: E[x0|x,k] = mu_k + (a s^2 / c_t)(x - a mu_k) and, with
    // the sigma factored analytically to stay stable as t -> 0,
    // E[eps|x,k] = sigma (x - a mu_k) / c_t.
    std::vector<double> ex0(d, 0.0), eeps(d, 0.0);
    const double shrink = a * s2 / c_t;
    const double eps_coef = sig / c_t;
    for (int c = comp_begin; c < comp_end; ++c) {
        const double r = std::exp(logw[c - comp_begin]);
        auto mu = spec.mean(c);
        for (int i = 0; i < d; ++i) {
            const double dev = x[i] - a * mu[i];
            ex0[i] += r * (mu[i] + shrink * dev);
            eeps[i] += r * eps_coef * dev;
        }
    }

    const double ad = sched.alpha_dot(t);
    const double sd = sched.sigma_dot(t);
    for (int i = 0; i < d; ++i) out[i] = ad * ex0[i] + sd * eeps[i];
}

// grad_x log p_t(x) of the mixture marginal: sum_k r_k (a mu_k - x) / c_t.
// Equals -sigma^{-1} E[eps|x]; undefined at t=0.
inline void oracle_score(std::span<const double> x, double t,
                         const MixtureSpec& spec, const Schedule& sched,
                         std::span<double> out, int comp_begin = 0,
                         int comp_end = -1) {
    if (comp_end < 0) comp_end = spec.num_components();
    require_domain(sched.sigma(t) > 0.0, "oracle_score: undefined at sigma(t)=0");
    const int d = spec.latent_dim();
    require_shape(static_cast<int>(out.size()) == d, "oracle_score: out size");
    const double a = sched.alpha(t);
    const double s2 = spec.component_std * spec.component_std;
    const double sig = sched.sigma(t);
    const double c_t = a * a * s2 + sig * sig;

    std::vector<double> logw;
    detail::log_responsibilities(x, t, spec, sched, comp_begin, comp_end, logw);

    std::fill(out.begin(), out.end(), 0.0);
    for (int c = comp_begin; c < comp_end; ++c) {
        const double r = std::exp(logw[c - comp_begin]);
        auto mu = spec.mean(c);
        for (int i = 0; i < d; ++i) out[i] += r * (a * mu[i] - x[i]) / c_t;
    }
}

}  // namespace reg
