#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "reg/common.hpp"
#include "reg/net.hpp"
#include "reg/rng.hpp"
#include "reg/schedule.hpp"
#include "reg/synthdata.hpp"

namespace reg {

enum class SamplerKind { SdeEulerMaruyama, OdeEuler, OdeHeun };

inline const char* to_string(SamplerKind k) {
    switch (k) {
        case SamplerKind::SdeEulerMaruyama: return "sde_euler_maruyama";
        case SamplerKind::OdeEuler: return "ode_euler";
        case SamplerKind::OdeHeun: return "ode_heun";
    }
    return "?";
}

inline SamplerKind sampler_kind_from_string(const std::string& s) {
    if (s == "sde_euler_maruyama") return SamplerKind::SdeEulerMaruyama;
    if (s == "ode_euler") return SamplerKind::OdeEuler;
    if (s == "ode_heun") return SamplerKind::OdeHeun;
    throw domain_error("unknown sampler kind: " + s);
}

struct SamplerConfig {
    SamplerKind kind = SamplerKind::SdeEulerMaruyama;
    int steps = 50;           // uniform grid from t=1 down to t=0
    double cfg_scale = 1.0;   // w; 1 disables guidance regardless of interval
    double cfg_lo = 0.0;      // guidance interval in t
    double cfg_hi = 0.85;
    bool guide_cls_channel = true;
    double t_switch = 0.02;   // below this t the SDE takes deterministic ODE steps
    std::uint64_t seed = 7;

    void validate() const {
        require_domain(steps >= 1, "SamplerConfig: steps >= 1");
        require_domain(cfg_lo <= cfg_hi && cfg_lo >= 0.0 && cfg_hi <= 1.0,
                       "SamplerConfig: bad guidance interval");
        require_domain(cfg_scale >= 1.0, "SamplerConfig: cfg_scale >= 1");
    }
};

// A joint velocity field over the latent channel and (optionally) the class
// token channel. Implementations write v into the two out spans.
using VelocityField =
    std::function<void(std::span<const double> z, std::span<const double> cls,
                       double t, std::span<double> v_z, std::span<double> v_cls)>;

// Analytic field from the mixture oracle: conditional on one class when
// label >= 0, the full marginal otherwise. No class-token channel.
inline VelocityField make_oracle_field(const MixtureSpec& spec,
                                       const Schedule& sched, int label = -1) {
    int c0 = 0, c1 = spec.num_components();
    if (label >= 0) {
        require_domain(label < spec.num_classes, "oracle field: label range");
        c0 = label * spec.components_per_class;
        c1 = c0 + spec.components_per_class;
    }
    return [spec, sched, c0, c1](std::span<const double> z,
                                 std::span<const double>, double t,
                                 std::span<double> v_z, std::span<double>) {
        oracle_velocity(z, t, spec, sched, v_z, c0, c1);
    };
}

// Field backed by the denoiser. Applies interval classifier-free guidance:
// inside [lo,hi] with w>1 the velocity is v_null + w (v_cond - v_null) from
// two forward passes; outside the interval the plain conditional velocity is
// used. Guidance touches the class-token channel only if guide_cls_channel.
inline VelocityField make_net_field(const Vec& weights, const NetConfig& cfg,
                                    const ParamIndex& ix, int label,
                                    const SamplerConfig& scfg) {
    auto acts = std::make_shared<Activations>();
    acts->resize(cfg);
    return [&weights, cfg, &ix, label, scfg, acts](
               std::span<const double> z, std::span<const double> cls, double t,
               std::span<double> v_z, std::span<double> v_cls) {
        ModelOutput cond = forward(weights, cfg, ix, z, cls, t, label, *acts);
        const bool guided =
            scfg.cfg_scale > 1.0 && t >= scfg.cfg_lo && t <= scfg.cfg_hi;
        if (!guided) {
            std::copy(cond.v_z.begin(), cond.v_z.end(), v_z.begin());
            std::copy_n(cond.v_cls.begin(), v_cls.size(), v_cls.begin());
            return;
        }
        ModelOutput null_out =
            forward(weights, cfg, ix, z, cls, t, cfg.null_label(), *acts);
        const double w = scfg.cfg_scale;
        for (std::size_t i = 0; i < v_z.size(); ++i)
            v_z[i] = null_out.v_z[i] + w * (cond.v_z[i] - null_out.v_z[i]);
        if (scfg.guide_cls_channel) {
            for (std::size_t i = 0; i < v_cls.size(); ++i)
                v_cls[i] = null_out.v_cls[i] + w * (cond.v_cls[i] - null_out.v_cls[i]);
        } else {
            std::copy_n(cond.v_cls.begin(), v_cls.size(), v_cls.begin());
        }
    };
}

struct SamplePath {
    Vec z;    // final latent
    Vec cls;  // final class-token channel (empty if cls_dim == 0)
    std::vector<Vec> trajectory;  // z at each grid point, when recorded
};

// Integrates the joint (z, cls) state from t=1 to t=0 on a uniform grid
// starting from the given state. SDE steps follow the reverse-time form
//   dx = [v - (1/2) w_t s] dt + sqrt(w_t) dW,   s from score_from_velocity,
// with dW realized as sqrt(|dt|) * xi per step; both channels use the same
// rule and the same grid. For t below t_switch the SDE switches to plain ODE
// steps, removing the stiff score term where sigma(t) -> 0.
inline SamplePath integrate_path(const VelocityField& field, Vec z_init,
                                 Vec cls_init, const SamplerConfig& scfg,
                                 const Schedule& sched, Rng& rng,
                                 bool record_trajectory = false) {
    scfg.validate();
    SamplePath out;
    out.z = std::move(z_init);
    out.cls = std::move(cls_init);

    Vec vz(out.z.size()), vcls(out.cls.size());
    Vec vz2, vcls2, ztmp, ctmp, sz, scls;
    const int n = scfg.steps;
    const double dt = -1.0 / n;

    if (record_trajectory) out.trajectory.push_back(out.z);

    auto euler_ode = [&](double t) {
        field(out.z, out.cls, t, vz, vcls);
        axpy(dt, vz.data(), out.z.data(), out.z.size());
        axpy(dt, vcls.data(), out.cls.data(), out.cls.size());
    };

    for (int k = 0; k < n; ++k) {
        const double t = 1.0 - static_cast<double>(k) / n;
        const double t_next = 1.0 - static_cast<double>(k + 1) / n;
        switch (scfg.kind) {
            case SamplerKind::OdeEuler: {
                euler_ode(t);
                break;
            }
            case SamplerKind::OdeHeun: {
                field(out.z, out.cls, t, vz, vcls);
                ztmp = out.z;
                ctmp = out.cls;
                axpy(dt, vz.data(), ztmp.data(), ztmp.size());
                axpy(dt, vcls.data(), ctmp.data(), ctmp.size());
                vz2.resize(vz.size());
                vcls2.resize(vcls.size());
                field(ztmp, ctmp, t_next, vz2, vcls2);
                axpy(0.5 * dt, vz.data(), out.z.data(), out.z.size());
                axpy(0.5 * dt, vz2.data(), out.z.data(), out.z.size());
                axpy(0.5 * dt, vcls.data(), out.cls.data(), out.cls.size());
                axpy(0.5 * dt, vcls2.data(), out.cls.data(), out.cls.size());
                break;
            }
            case SamplerKind::SdeEulerMaruyama: {
                if (t < scfg.t_switch) {
                    euler_ode(t);
                    break;
                }
                field(out.z, out.cls, t, vz, vcls);
                sz.resize(out.z.size());
                scls.resize(out.cls.size());
                score_from_velocity(vz, out.z, t, sched, sz);
                if (!out.cls.empty())
                    score_from_velocity(vcls, out.cls, t, sched, scls);
                const double wt = sched.w(t);
                const double noise_scale = std::sqrt(wt * std::abs(dt));
                for (std::size_t i = 0; i < out.z.size(); ++i)
                    out.z[i] += (vz[i] - 0.5 * wt * sz[i]) * dt +
                                noise_scale * rng.normal();
                for (std::size_t i = 0; i < out.cls.size(); ++i)
                    out.cls[i] += (vcls[i] - 0.5 * wt * scls[i]) * dt +
                                  noise_scale * rng.normal();
                break;
            }
        }
        for (double x : out.z)
            if (!std::isfinite(x))
                throw numeric_error("integrate_field: non-finite state at step " +
                                    std::to_string(k));
        if (record_trajectory) out.trajectory.push_back(out.z);
    }
    return out;
}

// Same, starting from a fresh N(0,I) draw for both channels.
inline SamplePath integrate_field(const VelocityField& field, int z_dim,
                                  int cls_dim, const SamplerConfig& scfg,
                                  const Schedule& sched, Rng& rng,
                                  bool record_trajectory = false) {
    Vec z(static_cast<std::size_t>(z_dim)), cls(static_cast<std::size_t>(cls_dim));
    rng.fill_normal(z.begin(), z.end());
    rng.fill_normal(cls.begin(), cls.end());
    return integrate_path(field, std::move(z), std::move(cls), scfg, sched, rng,
                          record_trajectory);
}

// Joint generation from pure noise with the trained denoiser (EMA weights).
// For the learnable-token variant the class channel is not integrated; its
// token readout is decoded once from the final state instead.
inline SamplePath sample(const DenoiserState& state, int label,
                         const SamplerConfig& scfg, const Schedule& sched,
                         std::uint64_t sample_index = 0,
                         bool record_trajectory = false) {
    const NetConfig& cfg = state.cfg;
    require_domain(label >= 0 && label < cfg.num_classes, "sample: label range");
    Rng rng = substream(scfg.seed, stream_tag::sampler, sample_index);
    VelocityField field = make_net_field(state.ema, cfg, state.index, label, scfg);
    SamplePath path =
        integrate_field(field, cfg.tokens * cfg.channels, cfg.d_sig(), scfg,
                        sched, rng, record_trajectory);
    if (cfg.cls_variant == ClsVariant::LearnableToken) {
        Activations acts;
        acts.resize(cfg);
        ModelOutput out = forward(state.ema, cfg, state.index, path.z, {}, 0.0,
                                  label, acts);
        path.cls = out.v_cls;
    }
    return path;
}

// ------------------------------------------------------------ sample dumps ---
// Binary latents + class tokens with a text manifest next to them.
inline void write_sample_dump(const std::string& path_prefix,
                              const std::vector<Vec>& z,
                              const std::vector<Vec>& cls,
                              const std::vector<int>& labels,
                              const std::string& config_hash,
                              std::uint64_t seed) {
    require_shape(z.size() == labels.size() && cls.size() == z.size(),
                  "write_sample_dump: count mismatch");
    const std::string bin_path = path_prefix + ".f64";
    std::ofstream os(bin_path, std::ios::binary);
    if (!os) throw io_error("write_sample_dump: cannot open " + bin_path);
    const std::uint64_t count = z.size();
    const std::uint64_t z_dim = count ? z[0].size() : 0;
    const std::uint64_t cls_dim = count ? cls[0].size() : 0;
    detail::put_u64(os, 0x31504d5544474552ull);  // "REGDUMP1"
    detail::put_u64(os, count);
    detail::put_u64(os, z_dim);
    detail::put_u64(os, cls_dim);
    for (std::size_t i = 0; i < count; ++i) {
        require_shape(z[i].size() == z_dim && cls[i].size() == cls_dim,
                      "write_sample_dump: ragged rows");
        for (double v : z[i]) detail::put_f64(os, v);
        for (double v : cls[i]) detail::put_f64(os, v);
    }
    if (!os) throw io_error("write_sample_dump: write failed " + bin_path);

    std::ofstream mf(path_prefix + ".manifest");
    if (!mf) throw io_error("write_sample_dump: cannot open manifest");
    mf << "config_hash " << config_hash << "\n";
    mf << "seed " << seed << "\n";
    mf << "count " << count << "\n";
    mf << "z_dim " << z_dim << "\n";
    mf << "cls_dim " << cls_dim << "\n";
    mf << "labels";
    for (int l : labels) mf << ' ' << l;
    mf << "\n";
}

}  // namespace reg
