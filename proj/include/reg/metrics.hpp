#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "reg/common.hpp"
#include "reg/linalg.hpp"
#include "reg/entangle.hpp"
#include "reg/net.hpp"
#include "reg/rng.hpp"
#include "reg/sample.hpp"
#include "reg/schedule.hpp"
#include "reg/synthdata.hpp"
#include "reg/teacher.hpp"

namespace reg {

// One row per sample; features already spatially averaged by the caller.
struct FeatureSet {
    std::size_t n = 0, d = 0;
    Vec X;  // [n x d]
};

namespace detail {

// Column-center features, then the linear kernel K = X X^T and its doubly
// centered form.
inline void centered_kernels(const FeatureSet& A, Vec& K, Vec& Kbar) {
    const std::size_t n = A.n, d = A.d;
    Vec Xc = A.X;
    for (std::size_t j = 0; j < d; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += Xc[i * d + j];
        mu /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) Xc[i * d + j] -= mu;
    }
    K.assign(n * n, 0.0);
    matmul_nt_acc(Xc.data(), Xc.data(), K.data(), n, d, n);

    Kbar = K;
    Vec rowmean(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) rowmean[i] += K[i * n + j];
        rowmean[i] /= static_cast<double>(n);
        total += rowmean[i];
    }
    total /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            Kbar[i * n + j] = K[i * n + j] - rowmean[i] - rowmean[j] + total;
}

// Index set of the k largest off-diagonal kernel values per row; ties broken
// toward the lower index so results do not depend on sort internals.
inline std::vector<std::vector<int>> knn_sets(const Vec& K, std::size_t n, int k) {
    std::vector<std::vector<int>> out(n);
    std::vector<int> idx;
    for (std::size_t i = 0; i < n; ++i) {
        idx.clear();
        for (std::size_t j = 0; j < n; ++j)
            if (j != i) idx.push_back(static_cast<int>(j));
        std::sort(idx.begin(), idx.end(), [&](int a, int b) {
            const double ka = K[i * n + static_cast<std::size_t>(a)];
            const double kb = K[i * n + static_cast<std::size_t>(b)];
            if (ka != kb) return ka > kb;
            return a < b;
        });
        out[i].assign(idx.begin(), idx.begin() + k);
        std::sort(out[i].begin(), out[i].end());
    }
    return out;
}

inline bool contains(const std::vector<int>& sorted, int v) {
    return std::binary_search(sorted.begin(), sorted.end(), v);
}

}  // namespace detail

// Centered kernel nearest-neighbor alignment. Kernels are linear on
// column-centered features; a pair (i,j), i != j, contributes K̄_ij L̄_ij to
// the alignment sum iff j is within the k nearest neighbors of i under both
// kernels; the score is normalized by the same sum applied to (K,K) and
// (L,L). Degenerate inputs (zero self-alignment) are an error.
inline double cknna(const FeatureSet& A, const FeatureSet& B, int k) {
    require_shape(A.n == B.n, "cknna: feature sets must have equal n");
    // k = n-1 keeps every neighbor and reproduces linear CKA.
    require_domain(k >= 1 && static_cast<std::size_t>(k) <= A.n - 1,
                   "cknna: need 1 <= k <= n - 1");
    const std::size_t n = A.n;

    Vec K, Kbar, L, Lbar;
    detail::centered_kernels(A, K, Kbar);
    detail::centered_kernels(B, L, Lbar);
    const auto knnK = detail::knn_sets(K, n, k);
    const auto knnL = detail::knn_sets(L, n, k);

    double align_kl = 0.0, align_kk = 0.0, align_ll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const int jj = static_cast<int>(j);
            const bool in_k = detail::contains(knnK[i], jj);
            const bool in_l = detail::contains(knnL[i], jj);
            const double kb = Kbar[i * n + j];
            const double lb = Lbar[i * n + j];
            if (in_k && in_l) align_kl += kb * lb;
            if (in_k) align_kk += kb * kb;
            if (in_l) align_ll += lb * lb;
        }
    }
    if (align_kk <= 0.0 || align_ll <= 0.0)
        throw domain_error("cknna: zero self-alignment (degenerate features)");
    return align_kl / std::sqrt(align_kk * align_ll);
}

// The k -> n-1 limit of cknna: every off-diagonal pair kept.
inline double cka(const FeatureSet& A, const FeatureSet& B) {
    require_shape(A.n == B.n, "cka: feature sets must have equal n");
    const std::size_t n = A.n;
    Vec K, Kbar, L, Lbar;
    detail::centered_kernels(A, K, Kbar);
    detail::centered_kernels(B, L, Lbar);
    double skl = 0.0, skk = 0.0, sll = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            skl += Kbar[i * n + j] * Lbar[i * n + j];
            skk += Kbar[i * n + j] * Kbar[i * n + j];
            sll += Lbar[i * n + j] * Lbar[i * n + j];
        }
    if (skk <= 0.0 || sll <= 0.0)
        throw domain_error("cka: zero self-alignment (degenerate features)");
    return skl / std::sqrt(skk * sll);
}

// Cosine between a generated class token and the codebook direction of the
// conditioned label. Zero vectors score 0 (flagged via degenerate).
inline double cos_to_codebook(std::span<const double> cls,
                              const TeacherSpec& teacher, int label,
                              bool* degenerate = nullptr) {
    auto code = teacher.codebook_row(label);
    require_shape(cls.size() == code.size(), "cos_to_codebook: dim mismatch");
    return nn::cosine(cls.data(), code.data(), cls.size(), nullptr, 1.0,
                      degenerate);
}

// ---------------------------------------------------------------- frechet ---
struct GaussianFit {
    std::size_t d = 0;
    Vec mean;  // [d]
    Vec cov;   // [d x d]
};

inline GaussianFit fit_gaussian(const FeatureSet& F) {
    require_domain(F.n >= F.d + 1, "fit_gaussian: need n >= d + 1 samples");
    GaussianFit g;
    g.d = F.d;
    g.mean.assign(F.d, 0.0);
    for (std::size_t i = 0; i < F.n; ++i)
        axpy(1.0 / static_cast<double>(F.n), F.X.data() + i * F.d, g.mean.data(), F.d);
    g.cov.assign(F.d * F.d, 0.0);
    Vec c(F.d);
    for (std::size_t i = 0; i < F.n; ++i) {
        for (std::size_t j = 0; j < F.d; ++j) c[j] = F.X[i * F.d + j] - g.mean[j];
        for (std::size_t a = 0; a < F.d; ++a)
            axpy(c[a], c.data(), g.cov.data() + a * F.d, F.d);
    }
    const double inv = 1.0 / static_cast<double>(F.n - 1);
    for (auto& v : g.cov) v *= inv;
    return g;
}

// Squared Frechet distance between two Gaussians:
//   |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}).
// The cross square root is computed as sqrt(Sa)^T Sb sqrt(Sa) via symmetric
// eigendecompositions, clamping small negative eigenvalues to zero.
inline double frechet_distance(const Vec& mean_a, const Vec& cov_a,
                               const Vec& mean_b, const Vec& cov_b) {
    const std::size_t d = mean_a.size();
    require_shape(mean_b.size() == d && cov_a.size() == d * d &&
                      cov_b.size() == d * d,
                  "frechet_distance: shape mismatch");

    auto check_sym_psd = [&](const Vec& S, const char* which) {
        double mx = 0.0;
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                mx = std::max(mx, std::abs(S[i * d + j]));
                if (std::abs(S[i * d + j] - S[j * d + i]) >
                    1e-8 * std::max(1.0, mx))
                    throw domain_error(std::string("frechet_distance: ") + which +
                                       " not symmetric");
            }
        return mx;
    };
    const double scale_a = check_sym_psd(cov_a, "cov_a");
    const double scale_b = check_sym_psd(cov_b, "cov_b");

    Vec eval_a, evec_a;
    sym_eig(cov_a, d, eval_a, evec_a);
    const double psd_tol = -1e-8 * std::max({scale_a, scale_b, 1.0});
    for (double e : eval_a)
        if (e < psd_tol) throw domain_error("frechet_distance: cov_a not PSD");

    // sqrt(Sa) = V diag(sqrt(max(e,0))) V^T
    Vec sq(d * d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
        const double se = std::sqrt(std::max(eval_a[c], 0.0));
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                sq[i * d + j] += se * evec_a[i * d + c] * evec_a[j * d + c];
    }
    // M = sqrt(Sa) Sb sqrt(Sa)
    Vec tmp(d * d, 0.0), M(d * d, 0.0);
    matmul_acc(sq.data(), cov_b.data(), tmp.data(), d, d, d);
    matmul_acc(tmp.data(), sq.data(), M.data(), d, d, d);
    // Symmetrize against roundoff before the eigensolve.
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = i + 1; j < d; ++j) {
            const double v = 0.5 * (M[i * d + j] + M[j * d + i]);
            M[i * d + j] = M[j * d + i] = v;
        }
    Vec eval_m, evec_m;
    sym_eig(M, d, eval_m, evec_m);
    for (double e : eval_m)
        if (e < psd_tol * std::max(scale_a, scale_b))
            throw domain_error("frechet_distance: cross term not PSD");

    double tr_sqrt = 0.0;
    for (double e : eval_m) tr_sqrt += std::sqrt(std::max(e, 0.0));
    double tr_a = 0.0, tr_b = 0.0, dmu = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
        tr_a += cov_a[i * d + i];
        tr_b += cov_b[i * d + i];
        const double diff = mean_a[i] - mean_b[i];
        dmu += diff * diff;
    }
    return std::max(0.0, dmu + tr_a + tr_b - 2.0 * tr_sqrt);
}

inline double frechet_distance(const GaussianFit& a, const GaussianFit& b) {
    return frechet_distance(a.mean, a.cov, b.mean, b.cov);
}

// ------------------------------------------------------------------ flops ---
struct FlopsReport {
    std::uint64_t flops = 0;   // multiply-adds of one forward pass
    double delta_pct = 0.0;    // relative cost of the extra token, percent
};

namespace detail {

inline std::uint64_t forward_flops(const NetConfig& cfg, bool with_cls) {
    const std::uint64_t D = static_cast<std::uint64_t>(cfg.d_model);
    const std::uint64_t N = static_cast<std::uint64_t>(cfg.tokens);
    const std::uint64_t T = N + (with_cls ? 1 : 0);
    const std::uint64_t depth = static_cast<std::uint64_t>(cfg.depth);
    const std::uint64_t L = static_cast<std::uint64_t>(cfg.channels);
    const std::uint64_t F = static_cast<std::uint64_t>(cfg.t_freq());
    const std::uint64_t dsig = static_cast<std::uint64_t>(cfg.d_sig());
    const std::uint64_t dhead = static_cast<std::uint64_t>(cfg.d_head_cls());

    std::uint64_t per_block = 2 * T * T * D + 4 * T * D * D  // attention
                              + 8 * T * D * D                // MLP
                              + 6 * D * D;                   // adaLN modulation
    std::uint64_t total = depth * per_block;
    total += F * D + D * D;      // timestep MLP
    total += 2 * D * D;          // final adaLN
    total += N * L * D;          // patch embedding
    total += N * D * L;          // latent head
    if (with_cls) {
        total += dsig * D;       // class-token embedding
        total += D * dhead;      // class-token head
    }
    return total;
}

// Closed-form cost of adding the one extra token, derived by expanding
// forward_flops(T=N+1) - forward_flops(T=N).
inline std::uint64_t extra_token_flops(const NetConfig& cfg) {
    const std::uint64_t D = static_cast<std::uint64_t>(cfg.d_model);
    const std::uint64_t N = static_cast<std::uint64_t>(cfg.tokens);
    const std::uint64_t depth = static_cast<std::uint64_t>(cfg.depth);
    const std::uint64_t dsig = static_cast<std::uint64_t>(cfg.d_sig());
    const std::uint64_t dhead = static_cast<std::uint64_t>(cfg.d_head_cls());
    return depth * (2 * D * (2 * N + 1) + 12 * D * D) + dsig * D + D * dhead;
}

}  // namespace detail

// Analytic forward-pass multiply-add count; delta_pct reports the relative
// increase of the one extra token over the plain N-token model.
inline FlopsReport flops_report(const NetConfig& cfg, bool with_cls) {
    FlopsReport r;
    r.flops = detail::forward_flops(cfg, with_cls);
    if (with_cls) {
        const std::uint64_t base = detail::forward_flops(cfg, false);
        r.delta_pct = 100.0 * (static_cast<double>(r.flops) - static_cast<double>(base)) /
                      static_cast<double>(base);
    }
    return r;
}

// The XL-shaped transformer used only by the overhead accountant.
inline NetConfig xl_shape_config() {
    NetConfig cfg;
    cfg.depth = 28;
    cfg.d_model = 1152;
    cfg.heads = 16;
    cfg.tokens = 256;
    cfg.channels = 4;
    cfg.align_depth = 8;
    cfg.num_classes = 1000;
    cfg.d_vf = 768;
    cfg.cls_variant = ClsVariant::TeacherCls;
    return cfg;
}

// --------------------------------------------------------------- eval_run ---
struct EvalOptions {
    int n_samples = 128;       // generated per class
    int n_real = 512;          // real samples per class for the reference fit
    int n_eval_cknna = 192;    // samples for the alignment sweeps
    int cknna_k = 10;
    double cknna_t = 0.5;      // fixed t for the layer sweep
    std::vector<double> t_grid = {0.1, 0.3, 0.5, 0.7, 0.9};
    std::uint64_t eval_seed = 99;
    int threads = 0;
};

struct EvalReport {
    std::vector<double> frechet_per_class;
    double frechet_mean = 0.0;
    double cls_cosine_mean = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> cknna_by_layer;                 // [depth], layer 1..depth
    std::vector<std::pair<double, double>> cknna_by_t;  // (t, score) at align depth
    int cknna_k = 10;
    int argmax_layer = 0;  // 1-based layer with the highest CKNNA
};

namespace detail {

inline void sample_class_latents(const MixtureSpec& spec, int label, int n,
                                 Rng& rng, FeatureSet& out_latents) {
    const int d = spec.latent_dim();
    out_latents.n = static_cast<std::size_t>(n);
    out_latents.d = static_cast<std::size_t>(d);
    out_latents.X.resize(static_cast<std::size_t>(n) * d);
    const int c0 = label * spec.components_per_class;
    for (int i = 0; i < n; ++i) {
        const int c = c0 + static_cast<int>(rng.below(
                               static_cast<std::uint64_t>(spec.components_per_class)));
        const double* mu = spec.means.data() + static_cast<std::size_t>(c) * d;
        double* z = out_latents.X.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) z[j] = mu[j] + spec.component_std * rng.normal();
    }
}

inline FeatureSet pooled_teacher_features(const TeacherSpec& teacher,
                                          const FeatureSet& latents) {
    FeatureSet f;
    f.n = latents.n;
    f.d = static_cast<std::size_t>(teacher.d_vf);
    f.X.resize(f.n * f.d);
    for (std::size_t i = 0; i < latents.n; ++i)
        teacher_pooled_feature(
            teacher, {latents.X.data() + i * latents.d, latents.d},
            {f.X.data() + i * f.d, f.d});
    return f;
}

}  // namespace detail

// Evaluation protocol:
//  (i)  per-class Frechet distance between generated and real samples in
//       pooled teacher feature space (EMA weights drive the sampler),
//  (ii) mean cosine between generated class tokens and the conditioned
//       codebook direction,
//  (iii) CKNNA between spatially averaged model hidden features (class token
//       excluded) on noised real data and pooled teacher features of the
//       clean data, swept over layers at fixed t and over t at the alignment
//       depth.
inline EvalReport eval_run(const DenoiserState& state, const MixtureSpec& spec,
                           const TeacherSpec& teacher, const SamplerConfig& scfg,
                           const Schedule& sched, const EvalOptions& opt = {}) {
    const NetConfig& cfg = state.cfg;
    require_shape(teacher.d_vf == cfg.d_vf && teacher.tokens == cfg.tokens,
                  "eval_run: teacher/net shape mismatch");
    require_domain(opt.n_samples >= teacher.d_vf + 1,
                   "eval_run: n_samples < d+1, covariance not estimable");

    EvalReport rep;
    rep.cknna_k = opt.cknna_k;
    const int K = spec.num_classes;
    rep.frechet_per_class.assign(static_cast<std::size_t>(K), 0.0);

    // (i) + (ii): generation, parallel across classes.
    std::vector<double> cos_sums(static_cast<std::size_t>(K), 0.0);
    std::vector<int> cos_counts(static_cast<std::size_t>(K), 0);
    int threads = opt.threads > 0
                      ? opt.threads
                      : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::clamp(threads, 1, K);
    std::atomic<int> next_class{0};
    auto class_worker = [&]() {
        for (;;) {
            const int k = next_class.fetch_add(1);
            if (k >= K) break;

            FeatureSet gen;
            gen.n = static_cast<std::size_t>(opt.n_samples);
            gen.d = static_cast<std::size_t>(teacher.d_vf);
            gen.X.resize(gen.n * gen.d);
            double cos_sum = 0.0;
            int cos_n = 0;
            for (int i = 0; i < opt.n_samples; ++i) {
                const std::uint64_t sample_index =
                    static_cast<std::uint64_t>(k) * 1000003u +
                    static_cast<std::uint64_t>(i);
                SamplePath p = sample(state, k, scfg, sched, sample_index);
                teacher_pooled_feature(teacher, p.z,
                                       {gen.X.data() + static_cast<std::size_t>(i) * gen.d,
                                        gen.d});
                if (static_cast<int>(p.cls.size()) == teacher.d_vf) {
                    cos_sum += cos_to_codebook(p.cls, teacher, k);
                    ++cos_n;
                }
            }
            Rng real_rng = substream(opt.eval_seed, stream_tag::misc,
                                     static_cast<std::uint64_t>(k));
            FeatureSet real_latents;
            detail::sample_class_latents(spec, k, opt.n_real, real_rng,
                                         real_latents);
            const FeatureSet real_f =
                detail::pooled_teacher_features(teacher, real_latents);
            rep.frechet_per_class[static_cast<std::size_t>(k)] =
                frechet_distance(fit_gaussian(gen), fit_gaussian(real_f));
            cos_sums[static_cast<std::size_t>(k)] = cos_sum;
            cos_counts[static_cast<std::size_t>(k)] = cos_n;
        }
    };
    if (threads == 1) {
        class_worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < threads; ++w) pool.emplace_back(class_worker);
        for (auto& th : pool) th.join();
    }

    rep.frechet_mean =
        std::accumulate(rep.frechet_per_class.begin(), rep.frechet_per_class.end(),
                        0.0) /
        static_cast<double>(K);
    const double cos_total = std::accumulate(cos_sums.begin(), cos_sums.end(), 0.0);
    const int cos_total_n = std::accumulate(cos_counts.begin(), cos_counts.end(), 0);
    if (cos_total_n > 0) rep.cls_cosine_mean = cos_total / cos_total_n;

    // (iii) CKNNA sweeps on noised real data.
    const int n_eval = opt.n_eval_cknna;
    Rng data_rng = substream(opt.eval_seed, stream_tag::data, 0xe7a1);
    const SampleBatch eval_batch = sample_batch(spec, n_eval, data_rng);

    FeatureSet teach;
    teach.n = static_cast<std::size_t>(n_eval);
    teach.d = static_cast<std::size_t>(teacher.d_vf);
    teach.X.resize(teach.n * teach.d);
    for (int i = 0; i < n_eval; ++i)
        teacher_pooled_feature(teacher, eval_batch.row(i),
                               {teach.X.data() + static_cast<std::size_t>(i) * teach.d,
                                teach.d});

    const std::size_t D = static_cast<std::size_t>(cfg.d_model);
    const std::size_t tok_off = cfg.has_token0() ? 1 : 0;
    // Hidden features at one (t, layer) for all eval samples. A single
    // forward caches every block output, so one pass covers all layers.
    auto hidden_features = [&](double t_fix,
                               std::vector<FeatureSet>& by_layer) {
        by_layer.assign(static_cast<std::size_t>(cfg.depth), FeatureSet{});
        for (auto& f : by_layer) {
            f.n = static_cast<std::size_t>(n_eval);
            f.d = D;
            f.X.assign(f.n * D, 0.0);
        }
        Activations acts;
        acts.resize(cfg);
        Vec sig, eps_z, eps_cls, z_t, cls_t;
        for (int i = 0; i < n_eval; ++i) {
            auto z0 = eval_batch.row(i);
            const int label = eval_batch.label[i];
            const TeacherFeatures tf = teacher_encode(teacher, z0, label);
            entanglement_signal(cfg, teacher, z0, tf, sig);
            Rng rn = substream(opt.eval_seed, stream_tag::noise, 0,
                               static_cast<std::uint64_t>(i));
            eps_z.resize(z0.size());
            rn.fill_normal(eps_z.begin(), eps_z.end());
            eps_cls.resize(sig.size());
            rn.fill_normal(eps_cls.begin(), eps_cls.end());
            z_t.resize(z0.size());
            noise(z0, eps_z, t_fix, sched, z_t);
            cls_t.resize(sig.size());
            if (!sig.empty()) noise(sig, eps_cls, t_fix, sched, cls_t);
            forward(state.ema, cfg, state.index, z_t, cls_t, t_fix, label, acts);
            for (int layer = 1; layer <= cfg.depth; ++layer) {
                const double* h = acts.block_io[static_cast<std::size_t>(layer)].data();
                double* dst = by_layer[static_cast<std::size_t>(layer - 1)].X.data() +
                              static_cast<std::size_t>(i) * D;
                // Spatial average over latent tokens only.
                for (int p = 0; p < cfg.tokens; ++p)
                    axpy(1.0 / cfg.tokens, h + (tok_off + static_cast<std::size_t>(p)) * D,
                         dst, D);
            }
        }
    };

    std::vector<FeatureSet> by_layer;
    hidden_features(opt.cknna_t, by_layer);
    rep.cknna_by_layer.resize(static_cast<std::size_t>(cfg.depth));
    for (int layer = 1; layer <= cfg.depth; ++layer)
        rep.cknna_by_layer[static_cast<std::size_t>(layer - 1)] =
            cknna(by_layer[static_cast<std::size_t>(layer - 1)], teach, opt.cknna_k);
    rep.argmax_layer =
        1 + static_cast<int>(std::max_element(rep.cknna_by_layer.begin(),
                                              rep.cknna_by_layer.end()) -
                             rep.cknna_by_layer.begin());

    for (double t_fix : opt.t_grid) {
        hidden_features(t_fix, by_layer);
        rep.cknna_by_t.emplace_back(
            t_fix,
            cknna(by_layer[static_cast<std::size_t>(cfg.align_depth - 1)], teach,
                  opt.cknna_k));
    }
    return rep;
}

}  // namespace reg
