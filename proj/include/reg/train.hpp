#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "reg/common.hpp"
#include "reg/entangle.hpp"
#include "reg/loss.hpp"
#include "reg/net.hpp"
#include "reg/rng.hpp"
#include "reg/schedule.hpp"
#include "reg/synthdata.hpp"
#include "reg/teacher.hpp"

namespace reg {

struct TrainConfig {
    std::int64_t steps = 20000;
    int batch = 128;
    double lr = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double ema_decay = 0.99;
    double label_dropout = 0.1;
    LossWeights loss_weights;
    std::uint64_t seed = 1;
    std::int64_t log_every = 100;
    std::int64_t checkpoint_every = 5000;
};

struct StepReport {
    double loss_pred_z = 0.0;
    double loss_pred_cls = 0.0;
    double loss_repa = 0.0;
    double loss_total = 0.0;
    double grad_norm = 0.0;
    int zero_norm_rows = 0;
};

// Gradients are accumulated into a fixed number of shards (samples are
// assigned to shards by index, shards reduced in index order), so the result
// is identical for any worker-thread count; only the shard grouping, which is
// a compile-time constant, determines the floating-point association.
inline constexpr int kGradShards = 16;


// One optimizer step on one batch. Randomness (t, eps, label dropout) is
// keyed by (cfg.seed, state.step, sample index): calling this twice on the
// same checkpoint produces the identical report and state.
inline StepReport train_step(DenoiserState& state, const SampleBatch& batch,
                             const TeacherSpec& teacher, const Schedule& sched,
                             const TrainConfig& cfg, int threads = 0) {
    const NetConfig& nc = state.cfg;
    const std::size_t P = state.index.total;
    const int B = batch.batch;
    require_shape(batch.latent_dim == nc.tokens * nc.channels,
                  "train_step: batch latent dim mismatch");

    const int shards = std::min(kGradShards, B);
    if (threads <= 0)
        threads = static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp(threads, 1, shards);

    struct ShardAcc {
        Vec grad;
        double lz = 0.0, lcls = 0.0, lrepa = 0.0;
        int zero_rows = 0;
    };
    std::vector<ShardAcc> acc(static_cast<std::size_t>(shards));
    for (auto& a : acc) a.grad.assign(P, 0.0);

    const AlignMap am = align_map(nc);
    const std::size_t Dvf = static_cast<std::size_t>(nc.d_vf);
    const std::size_t S = static_cast<std::size_t>(nc.seq_len());
    const bool use_repa = cfg.loss_weights.lambda > 0.0;

    std::atomic<int> next_shard{0};
    auto worker = [&]() {
        Activations acts;
        acts.resize(nc);
        Vec sig, eps_z, eps_cls, z_t, cls_t, vt_z, vt_cls, tgt, gv_z, gv_cls,
            gproj, proj_slice;
        for (;;) {
            const int s = next_shard.fetch_add(1);
            if (s >= shards) break;
            ShardAcc& a = acc[static_cast<std::size_t>(s)];
            const int i0 = static_cast<int>(static_cast<std::int64_t>(B) * s / shards);
            const int i1 = static_cast<int>(static_cast<std::int64_t>(B) * (s + 1) / shards);
            for (int i = i0; i < i1; ++i) {
                auto z0 = batch.row(i);
                const int label = batch.label[i];

                // Teacher always sees the clean latent and the true label.
                const TeacherFeatures tf = teacher_encode(teacher, z0, label);
                entanglement_signal(nc, teacher, z0, tf, sig);

                Rng rt = substream(cfg.seed, stream_tag::timestep,
                                   static_cast<std::uint64_t>(state.step),
                                   static_cast<std::uint64_t>(i));
                const double t = rt.uniform(sched.t_min, sched.t_max);

                Rng rn = substream(cfg.seed, stream_tag::noise,
                                   static_cast<std::uint64_t>(state.step),
                                   static_cast<std::uint64_t>(i));
                eps_z.resize(z0.size());
                rn.fill_normal(eps_z.begin(), eps_z.end());
                eps_cls.resize(sig.size());
                rn.fill_normal(eps_cls.begin(), eps_cls.end());

                z_t.resize(z0.size());
                noise(z0, eps_z, t, sched, z_t);
                vt_z.resize(z0.size());
                velocity_target(z0, eps_z, t, sched, vt_z);
                cls_t.resize(sig.size());
                vt_cls.resize(sig.size());
                if (!sig.empty()) {
                    noise(sig, eps_cls, t, sched, cls_t);
                    velocity_target(sig, eps_cls, t, sched, vt_cls);
                }

                Rng rd = substream(cfg.seed, stream_tag::dropout,
                                   static_cast<std::uint64_t>(state.step),
                                   static_cast<std::uint64_t>(i));
                const int label_in =
                    (rd.uniform() < cfg.label_dropout) ? nc.null_label() : label;

                ModelOutput out = forward(state.params, nc, state.index, z_t,
                                          cls_t, t, label_in, acts);

                gv_z.assign(out.v_z.size(), 0.0);
                gv_cls.assign(out.v_cls.size(), 0.0);
                // LearnableToken decodes a head but has no velocity target.
                const bool cls_loss = nc.has_cls_channel();
                const PredLoss pl = loss_pred(
                    out.v_z, vt_z, cls_loss ? std::span<const double>(out.v_cls) : std::span<const double>{},
                    cls_loss ? std::span<const double>(vt_cls) : std::span<const double>{},
                    cfg.loss_weights, gv_z,
                    cls_loss ? std::span<double>(gv_cls) : std::span<double>{});

                double repa_val = 0.0;
                gproj.assign(out.projected.size(), 0.0);
                {
                    align_targets(nc, tf, tgt);
                    proj_slice.assign(
                        out.projected.begin() + am.proj_row0 * Dvf,
                        out.projected.begin() + (am.proj_row0 + am.rows) * Dvf);
                    Vec grow(am.rows * Dvf, 0.0);
                    const RepaLoss rl =
                        loss_repa(proj_slice, tgt, am.rows, Dvf,
                                  use_repa ? std::span<double>(grow) : std::span<double>{});
                    repa_val = rl.value;
                    a.zero_rows += rl.zero_norm_rows;
                    if (use_repa) {
                        // d L_total / d proj = lambda * d L_REPA / d proj
                        for (std::size_t r = 0; r < am.rows * Dvf; ++r)
                            gproj[am.proj_row0 * Dvf + r] =
                                cfg.loss_weights.lambda * grow[r];
                    }
                }

                backward(state.params, nc, state.index, acts, gv_z,
                         cls_loss ? std::span<const double>(gv_cls) : std::span<const double>{},
                         use_repa ? std::span<const double>(gproj) : std::span<const double>{},
                         a.grad);

                a.lz += pl.z_term;
                a.lcls += pl.cls_term;
                a.lrepa += repa_val;
            }
        }
    };

    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int w = 0; w < threads; ++w) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    // Reduce in shard order; scale to batch means.
    StepReport rep;
    Vec grad(P, 0.0);
    for (const auto& a : acc) {
        axpy(1.0, a.grad.data(), grad.data(), P);
        rep.loss_pred_z += a.lz;
        rep.loss_pred_cls += a.lcls;
        rep.loss_repa += a.lrepa;
        rep.zero_norm_rows += a.zero_rows;
    }
    const double invB = 1.0 / static_cast<double>(B);
    for (auto& g : grad) g *= invB;
    rep.loss_pred_z *= invB;
    rep.loss_pred_cls *= invB;
    rep.loss_repa *= invB;
    const double pred =
        rep.loss_pred_z + cfg.loss_weights.beta * rep.loss_pred_cls;
    rep.loss_total = loss_total(pred, rep.loss_repa, cfg.loss_weights);

    if (!std::isfinite(rep.loss_total))
        throw numeric_error("train_step: non-finite loss at step " +
                            std::to_string(state.step));
    const std::size_t row_budget = static_cast<std::size_t>(B) * am.rows;
    if (rep.zero_norm_rows > static_cast<int>(row_budget / 100))
        throw numeric_error("train_step: zero-norm alignment rows exceed 1% at step " +
                            std::to_string(state.step));

    rep.grad_norm = norm2(grad.data(), P);
    if (!std::isfinite(rep.grad_norm))
        throw numeric_error("train_step: non-finite gradient at step " +
                            std::to_string(state.step));

    // AdamW with decoupled weight decay, then the EMA shadow update.
    const std::int64_t tstep = state.step + 1;
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(tstep));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(tstep));
    for (std::size_t j = 0; j < P; ++j) {
        const double g = grad[j];
        state.m[j] = cfg.adam_beta1 * state.m[j] + (1.0 - cfg.adam_beta1) * g;
        state.v[j] = cfg.adam_beta2 * state.v[j] + (1.0 - cfg.adam_beta2) * g * g;
        const double mhat = state.m[j] / bc1;
        const double vhat = state.v[j] / bc2;
        state.params[j] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) +
                                     cfg.weight_decay * state.params[j]);
    }
    for (std::size_t j = 0; j < P; ++j) {
        state.ema[j] = cfg.ema_decay * state.ema[j] +
                       (1.0 - cfg.ema_decay) * state.params[j];
        if (!std::isfinite(state.params[j]))
            throw numeric_error("train_step: non-finite parameter after step " +
                                std::to_string(state.step));
    }
    state.step = tstep;
    return rep;
}

// ------------------------------------------------------------- run_training ---
struct TrainRun {
    DenoiserState state;
    std::string checkpoint_path;  // final checkpoint
    std::string metrics_path;     // CSV of logged steps
    StepReport last_report;
};

inline std::string metrics_csv_header() {
    return "step,loss_pred_z,loss_pred_cls,loss_repa,loss_total,grad_norm";
}

// Full training loop: writes periodic checkpoints and a step-indexed metrics
// CSV under out_dir. Pass a loaded checkpoint to resume; the continuation is
// bit-identical to an uninterrupted run because all per-step randomness is
// keyed by step index.
inline TrainRun run_training(const MixtureSpec& spec, const TeacherSpec& teacher,
                             const NetConfig& net_cfg, const TrainConfig& cfg,
                             const Schedule& sched, const std::string& out_dir,
                             const DenoiserState* resume = nullptr,
                             int threads = 0, bool quiet = true) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw io_error("run_training: cannot create " + out_dir);

    TrainRun run;
    run.state = resume ? *resume : init_state(net_cfg, cfg.seed);
    run.metrics_path = out_dir + "/metrics.csv";
    run.checkpoint_path = out_dir + "/final.ckpt";

    const bool fresh = (run.state.step == 0);
    std::ofstream csv(run.metrics_path,
                      fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw io_error("run_training: cannot write " + run.metrics_path);
    if (fresh) csv << metrics_csv_header() << "\n";

    save_checkpoint(out_dir + "/step0.ckpt", run.state);

    for (std::int64_t step = run.state.step; step < cfg.steps; ++step) {
        Rng data_rng = substream(cfg.seed, stream_tag::data,
                                 static_cast<std::uint64_t>(step));
        const SampleBatch batch = sample_batch(spec, cfg.batch, data_rng);
        run.last_report = train_step(run.state, batch, teacher, sched, cfg, threads);

        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            csv << step << ',' << format_double(run.last_report.loss_pred_z)
                << ',' << format_double(run.last_report.loss_pred_cls) << ','
                << format_double(run.last_report.loss_repa) << ','
                << format_double(run.last_report.loss_total) << ','
                << format_double(run.last_report.grad_norm) << "\n";
            csv.flush();
            if (!quiet)
                std::cerr << "step " << step << " loss " << run.last_report.loss_total
                          << " grad " << run.last_report.grad_norm << "\n";
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 != cfg.steps) {
            save_checkpoint(out_dir + "/step" + std::to_string(step + 1) + ".ckpt",
                            run.state);
        }
    }
    save_checkpoint(run.checkpoint_path, run.state);
    return run;
}

}  // namespace reg
