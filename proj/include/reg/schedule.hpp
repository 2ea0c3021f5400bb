#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "reg/common.hpp"

namespace reg {

enum class ScheduleKind { Linear };

inline const char* to_string(ScheduleKind k) {
    switch (k) {
        case ScheduleKind::Linear: return "linear";
    }
    return "?";
}

// The interpolant bridging data (t=0) and noise (t=1):
//   x_t = alpha(t) * x0 + sigma(t) * eps
// Linear: alpha = 1-t, sigma = t. The diffusion weight w(t) = sigma(t) is the
// coefficient in front of the score term and the noise in the reverse SDE.
struct Schedule {
    ScheduleKind kind = ScheduleKind::Linear;
    double t_min = 1e-4;  // training draws t uniform on [t_min, t_max]
    double t_max = 1.0;

    double alpha(double t) const { return 1.0 - t; }
    double sigma(double t) const { return t; }
    double alpha_dot(double /*t*/) const { return -1.0; }
    double sigma_dot(double /*t*/) const { return 1.0; }
    double w(double t) const { return sigma(t); }

    // alpha * sigma_dot - alpha_dot * sigma; the velocity->score conversion
    // denominator. Identically 1 for Linear.
    double denom(double t) const {
        return alpha(t) * sigma_dot(t) - alpha_dot(t) * sigma(t);
    }
};

// x_t = alpha(t) * x0 + sigma(t) * eps, elementwise.
inline void noise(std::span<const double> x0, std::span<const double> eps,
                  double t, const Schedule& sched, std::span<double> out) {
    require_shape(x0.size() == eps.size() && x0.size() == out.size(),
                  "noise: shape mismatch");
    require_domain(t >= 0.0 && t <= 1.0, "noise: t out of [0,1]");
    const double a = sched.alpha(t);
    const double s = sched.sigma(t);
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = a * x0[i] + s * eps[i];
}

// Velocity regression target: alpha_dot(t) * x0 + sigma_dot(t) * eps.
// For Linear this is eps - x0, independent of t.
inline void velocity_target(std::span<const double> x0,
                            std::span<const double> eps, double t,
                            const Schedule& sched, std::span<double> out) {
    require_shape(x0.size() == eps.size() && x0.size() == out.size(),
                  "velocity_target: shape mismatch");
    const double ad = sched.alpha_dot(t);
    const double sd = sched.sigma_dot(t);
    for (std::size_t i = 0; i < x0.size(); ++i) out[i] = ad * x0[i] + sd * eps[i];
}

// Score from velocity:
//   s(x,t) = -sigma^{-1} (alpha v - alpha_dot x) / (alpha sigma_dot - alpha_dot sigma)
// Consistent with s = -sigma^{-1} E[eps | x_t = x]; see README for the sign
// convention. Undefined at sigma(t)=0.
inline void score_from_velocity(std::span<const double> v,
                                std::span<const double> x, double t,
                                const Schedule& sched, std::span<double> out) {
    require_shape(v.size() == x.size() && v.size() == out.size(),
                  "score_from_velocity: shape mismatch");
    const double s = sched.sigma(t);
    require_domain(s > 0.0, "score_from_velocity: sigma(t)=0, score undefined");
    const double a = sched.alpha(t);
    const double ad = sched.alpha_dot(t);
    const double d = sched.denom(t);
    const double inv = -1.0 / (s * d);
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = inv * (a * v[i] - ad * x[i]);
}

}  // namespace reg
