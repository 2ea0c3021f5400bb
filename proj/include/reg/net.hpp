#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "reg/common.hpp"
#include "reg/kernels.hpp"
#include "reg/linalg.hpp"
#include "reg/rng.hpp"

namespace reg {

// What occupies the extra token slot in front of the latent tokens.
//   TeacherCls        noised teacher class token (the full mechanism)
//   LearnableToken    trained constant token, no noise, no velocity target
//   AvgTeacherFeature noised mean of teacher patch features
//   AvgLatentFeature  noised mean of latent patch vectors
//   None              no extra token (plain SiT sequence)
enum class ClsVariant {
    TeacherCls,
    LearnableToken,
    AvgTeacherFeature,
    AvgLatentFeature,
    None
};

inline const char* to_string(ClsVariant v) {
    switch (v) {
        case ClsVariant::TeacherCls: return "teacher_cls";
        case ClsVariant::LearnableToken: return "learnable_token";
        case ClsVariant::AvgTeacherFeature: return "avg_teacher_feature";
        case ClsVariant::AvgLatentFeature: return "avg_latent_feature";
        case ClsVariant::None: return "none";
    }
    return "?";
}

inline ClsVariant cls_variant_from_string(const std::string& s) {
    if (s == "teacher_cls") return ClsVariant::TeacherCls;
    if (s == "learnable_token") return ClsVariant::LearnableToken;
    if (s == "avg_teacher_feature") return ClsVariant::AvgTeacherFeature;
    if (s == "avg_latent_feature") return ClsVariant::AvgLatentFeature;
    if (s == "none") return ClsVariant::None;
    throw domain_error("unknown cls variant: " + s);
}

struct NetConfig {
    int depth = 4;
    int d_model = 64;  // hidden dim D_z
    int heads = 4;
    int tokens = 16;   // N latent tokens (grid*grid, patch size 1)
    int channels = 2;  // L channels per latent token
    int align_depth = 2;  // 1-based block whose output feeds the projector
    int num_classes = 8;
    int d_vf = 64;  // teacher feature dim (projector output)
    ClsVariant cls_variant = ClsVariant::TeacherCls;
    bool use_pos_embed = true;

    // The model carries a token-0 slot for every variant except None.
    bool has_token0() const { return cls_variant != ClsVariant::None; }
    // A noised signal channel exists (input + velocity target + sampler
    // integration) for the three entanglement variants; OLT's token is a
    // parameter and None has no slot at all.
    bool has_cls_channel() const {
        return cls_variant == ClsVariant::TeacherCls ||
               cls_variant == ClsVariant::AvgTeacherFeature ||
               cls_variant == ClsVariant::AvgLatentFeature;
    }
    // Dimension of the noised signal.
    int d_sig() const {
        switch (cls_variant) {
            case ClsVariant::TeacherCls:
            case ClsVariant::AvgTeacherFeature: return d_vf;
            case ClsVariant::AvgLatentFeature: return channels;
            default: return 0;
        }
    }
    // Output dim of the token-0 head. OLT keeps a d_vf head so its token's
    // semantic content can be measured, even though nothing trains it.
    int d_head_cls() const {
        if (cls_variant == ClsVariant::LearnableToken) return d_vf;
        return d_sig();
    }
    int seq_len() const { return tokens + (has_token0() ? 1 : 0); }
    int t_freq() const { return d_model; }
    int null_label() const { return num_classes; }

    void validate() const {
        require_domain(depth >= 1 && d_model >= 1 && heads >= 1 && tokens >= 1,
                       "NetConfig: sizes must be positive");
        require_domain(d_model % heads == 0, "NetConfig: d_model % heads != 0");
        require_domain(align_depth >= 1 && align_depth <= depth,
                       "NetConfig: align_depth out of [1, depth]");
        require_domain(num_classes >= 1, "NetConfig: num_classes >= 1");
    }
};

// ----------------------------------------------------------- param index ---
// Flat parameter vector with a named-shape index.
struct ParamIndex {
    struct Entry {
        std::string name;
        std::size_t rows = 0, cols = 0, offset = 0;
        std::size_t size() const { return rows * cols; }
    };
    std::vector<Entry> entries;
    std::size_t total = 0;

    const Entry& find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return e;
        throw domain_error("ParamIndex: no entry named " + name);
    }
    std::span<double> view(Vec& p, const std::string& name) const {
        const auto& e = find(name);
        return {p.data() + e.offset, e.size()};
    }
    std::span<const double> view(const Vec& p, const std::string& name) const {
        const auto& e = find(name);
        return {p.data() + e.offset, e.size()};
    }
};

inline ParamIndex build_param_index(const NetConfig& cfg) {
    cfg.validate();
    ParamIndex ix;
    auto add = [&](const std::string& name, std::size_t rows, std::size_t cols) {
        ix.entries.push_back({name, rows, cols, ix.total});
        ix.total += rows * cols;
    };
    const auto D = static_cast<std::size_t>(cfg.d_model);
    const auto L = static_cast<std::size_t>(cfg.channels);
    const auto F = static_cast<std::size_t>(cfg.t_freq());

    add("patch_embed.w", L, D);
    add("patch_embed.b", 1, D);
    if (cfg.has_cls_channel()) {
        add("cls_embed.w", static_cast<std::size_t>(cfg.d_sig()), D);
        add("cls_embed.b", 1, D);
    }
    if (cfg.cls_variant == ClsVariant::LearnableToken) add("token0", 1, D);
    if (cfg.has_token0()) add("pos_cls", 1, D);
    add("label_embed", static_cast<std::size_t>(cfg.num_classes) + 1, D);
    add("t_mlp.w1", F, D);
    add("t_mlp.b1", 1, D);
    add("t_mlp.w2", D, D);
    add("t_mlp.b2", 1, D);
    for (int i = 0; i < cfg.depth; ++i) {
        const std::string p = "block" + std::to_string(i) + ".";
        add(p + "qkv.w", D, 3 * D);
        add(p + "qkv.b", 1, 3 * D);
        add(p + "attn_out.w", D, D);
        add(p + "attn_out.b", 1, D);
        add(p + "mlp.w1", D, 4 * D);
        add(p + "mlp.b1", 1, 4 * D);
        add(p + "mlp.w2", 4 * D, D);
        add(p + "mlp.b2", 1, D);
        add(p + "ada.w", D, 6 * D);
        add(p + "ada.b", 1, 6 * D);
    }
    add("final.ada.w", D, 2 * D);
    add("final.ada.b", 1, 2 * D);
    add("head_z.w", D, L);
    add("head_z.b", 1, L);
    if (cfg.has_token0()) {
        add("head_cls.w", D, static_cast<std::size_t>(cfg.d_head_cls()));
        add("head_cls.b", 1, static_cast<std::size_t>(cfg.d_head_cls()));
    }
    add("proj.w1", D, D);
    add("proj.b1", 1, D);
    add("proj.w2", D, static_cast<std::size_t>(cfg.d_vf));
    add("proj.b2", 1, static_cast<std::size_t>(cfg.d_vf));
    return ix;
}

// Trainable state: parameters, EMA shadow, optimizer moments, step counter.
struct DenoiserState {
    NetConfig cfg;
    ParamIndex index;
    std::uint64_t seed = 0;
    std::int64_t step = 0;
    Vec params, ema, m, v;
    std::array<std::uint64_t, 4> rng_state{};
};

inline DenoiserState init_state(const NetConfig& cfg, std::uint64_t seed) {
    DenoiserState st;
    st.cfg = cfg;
    st.index = build_param_index(cfg);
    st.seed = seed;
    st.params.assign(st.index.total, 0.0);
    st.m.assign(st.index.total, 0.0);
    st.v.assign(st.index.total, 0.0);

    Rng rng = substream(seed, stream_tag::init, 1);
    auto gauss = [&](std::span<double> w, double std_) {
        for (auto& x : w) x = std_ * rng.normal();
    };
    for (const auto& e : st.index.entries) {
        std::span<double> w{st.params.data() + e.offset, e.size()};
        // adaLN modulations and output heads start at zero so every block is
        // the identity and the initial velocity field is zero (DiT-style).
        // head_cls stays randomly initialized: for the learnable-token
        // variant nothing ever trains it, and a random projection is the
        // honest "no semantics" reference.
        const bool zero_init = e.name.ends_with("ada.w") || e.name.ends_with("ada.b") ||
                               e.name == "head_z.w" || e.name.ends_with(".b");
        if (zero_init)
            std::fill(w.begin(), w.end(), 0.0);
        else
            gauss(w, 0.02);
    }
    st.ema = st.params;
    st.rng_state = rng.state();
    return st;
}

// ------------------------------------------------------------ activations ---
// Per-thread scratch holding everything backward needs. Reused across
// samples; sized once from the config.
struct Activations {
    struct Block {
        Vec mod;          // [6D]
        Vec mean1, rstd1; // [S]
        Vec ln1, h1;      // [S x D]
        Vec qkv;          // [S x 3D]
        Vec probs;        // [H x S x S]
        Vec attno, ao;    // [S x D]
        Vec xmid;         // [S x D] after attention residual
        Vec mean2, rstd2; // [S]
        Vec ln2, h2;      // [S x D]
        Vec m1, m1s;      // [S x 4D]
        Vec m2;           // [S x D]
    };

    NetConfig cfg;
    Vec z_t, cls_t;  // copies of the inputs (embed backward needs them)
    int label = 0;
    double t = 0.0;

    Vec fs, c1, c1s, c2, cond, conds;  // conditioning path
    std::vector<Vec> block_io;         // depth+1 buffers of [S x D]
    std::vector<Block> blocks;
    Vec modf, meanf, rstdf, lnf, hf;   // final layer
    Vec p1, p1s, proj;                 // projector (h_phi)
    Vec pos_sin;                       // [N x D] fixed table

    void resize(const NetConfig& c) {
        cfg = c;
        const std::size_t S = static_cast<std::size_t>(c.seq_len());
        const std::size_t D = static_cast<std::size_t>(c.d_model);
        const std::size_t H = static_cast<std::size_t>(c.heads);
        const std::size_t N = static_cast<std::size_t>(c.tokens);
        z_t.resize(N * c.channels);
        cls_t.resize(static_cast<std::size_t>(c.d_sig()));
        fs.resize(c.t_freq());
        c1.resize(D); c1s.resize(D); c2.resize(D);
        cond.resize(D); conds.resize(D);
        block_io.assign(c.depth + 1, Vec(S * D));
        blocks.assign(c.depth, Block{});
        for (auto& b : blocks) {
            b.mod.resize(6 * D);
            b.mean1.resize(S); b.rstd1.resize(S);
            b.ln1.resize(S * D); b.h1.resize(S * D);
            b.qkv.resize(S * 3 * D);
            b.probs.resize(H * S * S);
            b.attno.resize(S * D); b.ao.resize(S * D);
            b.xmid.resize(S * D);
            b.mean2.resize(S); b.rstd2.resize(S);
            b.ln2.resize(S * D); b.h2.resize(S * D);
            b.m1.resize(S * 4 * D); b.m1s.resize(S * 4 * D);
            b.m2.resize(S * D);
        }
        modf.resize(2 * D);
        meanf.resize(S); rstdf.resize(S);
        lnf.resize(S * D); hf.resize(S * D);
        p1.resize(S * D); p1s.resize(S * D);
        proj.resize(S * static_cast<std::size_t>(c.d_vf));

        pos_sin.assign(N * D, 0.0);
        for (std::size_t p = 0; p < N; ++p) {
            double* row = pos_sin.data() + p * D;
            for (std::size_t j = 0; j < D / 2; ++j) {
                const double freq = std::pow(1e4, -2.0 * static_cast<double>(j) /
                                                       static_cast<double>(D));
                row[2 * j] = std::sin(static_cast<double>(p) * freq);
                row[2 * j + 1] = std::cos(static_cast<double>(p) * freq);
            }
        }
    }
};

struct ModelOutput {
    Vec v_z;        // [N x L]
    Vec v_cls;      // [d_head_cls], empty without a token-0 slot
    Vec hidden_at_n;  // [S x D]
    Vec projected;    // [S x d_vf] = h_phi(hidden_at_n) row-wise
};

// ---------------------------------------------------------------- forward ---
// label must lie in [0, num_classes]; num_classes is the null class used for
// classifier-free guidance. cls_t must be present exactly when the config has
// a noised signal channel.
inline ModelOutput forward(const Vec& params, const NetConfig& cfg,
                           const ParamIndex& ix, std::span<const double> z_t,
                           std::span<const double> cls_t, double t, int label,
                           Activations& acts) {
    const std::size_t S = static_cast<std::size_t>(cfg.seq_len());
    const std::size_t D = static_cast<std::size_t>(cfg.d_model);
    const std::size_t N = static_cast<std::size_t>(cfg.tokens);
    const std::size_t L = static_cast<std::size_t>(cfg.channels);
    const std::size_t H = static_cast<std::size_t>(cfg.heads);
    const std::size_t hd = D / H;

    require_shape(z_t.size() == N * L, "forward: z_t size mismatch");
    require_shape(cls_t.size() == static_cast<std::size_t>(cfg.d_sig()),
                  "forward: cls_t must be present iff the config has a cls channel");
    require_domain(label >= 0 && label <= cfg.num_classes,
                   "forward: label out of [0, num_classes]");

    if (acts.block_io.size() != static_cast<std::size_t>(cfg.depth) + 1)
        acts.resize(cfg);
    std::copy(z_t.begin(), z_t.end(), acts.z_t.begin());
    std::copy(cls_t.begin(), cls_t.end(), acts.cls_t.begin());
    acts.label = label;
    acts.t = t;

    auto P = [&](const char* name) { return ix.view(params, name).data(); };

    // Conditioning: sinusoidal timestep features -> MLP, plus label embedding.
    nn::sincos_features(t, acts.fs.data(), static_cast<std::size_t>(cfg.t_freq()));
    nn::linear_fwd(acts.fs.data(), P("t_mlp.w1"), P("t_mlp.b1"), acts.c1.data(),
                   1, static_cast<std::size_t>(cfg.t_freq()), D);
    nn::silu_fwd(acts.c1.data(), acts.c1s.data(), D);
    nn::linear_fwd(acts.c1s.data(), P("t_mlp.w2"), P("t_mlp.b2"), acts.c2.data(),
                   1, D, D);
    const double* lab = P("label_embed") + static_cast<std::size_t>(label) * D;
    for (std::size_t j = 0; j < D; ++j) acts.cond[j] = acts.c2[j] + lab[j];
    nn::silu_fwd(acts.cond.data(), acts.conds.data(), D);

    // Token embedding. Token 0 is the class-token slot when present.
    double* x0 = acts.block_io[0].data();
    const std::size_t tok_off = cfg.has_token0() ? 1 : 0;
    nn::linear_fwd(z_t.data(), P("patch_embed.w"), P("patch_embed.b"),
                   x0 + tok_off * D, N, L, D);
    if (cfg.use_pos_embed)
        for (std::size_t p = 0; p < N; ++p)
            axpy(1.0, acts.pos_sin.data() + p * D, x0 + (tok_off + p) * D, D);
    if (cfg.has_token0()) {
        if (cfg.cls_variant == ClsVariant::LearnableToken) {
            std::copy_n(P("token0"), D, x0);
        } else {
            nn::linear_fwd(cls_t.data(), P("cls_embed.w"), P("cls_embed.b"), x0,
                           1, static_cast<std::size_t>(cfg.d_sig()), D);
        }
        if (cfg.use_pos_embed) axpy(1.0, P("pos_cls"), x0, D);
    }

    // Transformer blocks: adaLN-modulated attention + MLP with gated residuals.
    for (int i = 0; i < cfg.depth; ++i) {
        auto& b = acts.blocks[static_cast<std::size_t>(i)];
        const std::string pre = "block" + std::to_string(i) + ".";
        auto BP = [&](const char* suffix) {
            return ix.view(params, pre + suffix).data();
        };
        const double* xin = acts.block_io[static_cast<std::size_t>(i)].data();
        double* xout = acts.block_io[static_cast<std::size_t>(i) + 1].data();

        nn::linear_fwd(acts.conds.data(), BP("ada.w"), BP("ada.b"), b.mod.data(),
                       1, D, 6 * D);
        const double* g1 = b.mod.data() + 2 * D;
        const double* g2 = b.mod.data() + 5 * D;

        nn::layernorm_fwd(xin, b.ln1.data(), b.mean1.data(), b.rstd1.data(), S, D);
        nn::modulate_fwd(b.ln1.data(), b.mod.data() + 0 * D, b.mod.data() + 1 * D,
                         b.h1.data(), S, D);
        nn::linear_fwd(b.h1.data(), BP("qkv.w"), BP("qkv.b"), b.qkv.data(), S, D,
                       3 * D);
        // Split rows [q | k | v] into contiguous buffers for the attention kernel.
        static thread_local Vec qbuf, kbuf, vbuf;
        qbuf.resize(S * D); kbuf.resize(S * D); vbuf.resize(S * D);
        for (std::size_t r = 0; r < S; ++r) {
            const double* src = b.qkv.data() + r * 3 * D;
            std::copy_n(src, D, qbuf.data() + r * D);
            std::copy_n(src + D, D, kbuf.data() + r * D);
            std::copy_n(src + 2 * D, D, vbuf.data() + r * D);
        }
        nn::attention_fwd(qbuf.data(), kbuf.data(), vbuf.data(), b.attno.data(),
                          b.probs.data(), S, H, hd);
        nn::linear_fwd(b.attno.data(), BP("attn_out.w"), BP("attn_out.b"),
                       b.ao.data(), S, D, D);
        nn::gated_residual_fwd(xin, g1, b.ao.data(), b.xmid.data(), S, D);

        nn::layernorm_fwd(b.xmid.data(), b.ln2.data(), b.mean2.data(),
                          b.rstd2.data(), S, D);
        nn::modulate_fwd(b.ln2.data(), b.mod.data() + 3 * D, b.mod.data() + 4 * D,
                         b.h2.data(), S, D);
        nn::linear_fwd(b.h2.data(), BP("mlp.w1"), BP("mlp.b1"), b.m1.data(), S, D,
                       4 * D);
        nn::silu_fwd(b.m1.data(), b.m1s.data(), S * 4 * D);
        nn::linear_fwd(b.m1s.data(), BP("mlp.w2"), BP("mlp.b2"), b.m2.data(), S,
                       4 * D, D);
        nn::gated_residual_fwd(b.xmid.data(), g2, b.m2.data(), xout, S, D);
    }

    // Final adaLN + decode heads.
    const double* xfin = acts.block_io[static_cast<std::size_t>(cfg.depth)].data();
    nn::linear_fwd(acts.conds.data(), P("final.ada.w"), P("final.ada.b"),
                   acts.modf.data(), 1, D, 2 * D);
    nn::layernorm_fwd(xfin, acts.lnf.data(), acts.meanf.data(), acts.rstdf.data(),
                      S, D);
    nn::modulate_fwd(acts.lnf.data(), acts.modf.data(), acts.modf.data() + D,
                     acts.hf.data(), S, D);

    ModelOutput out;
    out.v_z.resize(N * L);
    nn::linear_fwd(acts.hf.data() + tok_off * D, P("head_z.w"), P("head_z.b"),
                   out.v_z.data(), N, D, L);
    if (cfg.has_token0()) {
        out.v_cls.resize(static_cast<std::size_t>(cfg.d_head_cls()));
        nn::linear_fwd(acts.hf.data(), P("head_cls.w"), P("head_cls.b"),
                       out.v_cls.data(), 1, D,
                       static_cast<std::size_t>(cfg.d_head_cls()));
    }

    // Projector h_phi on the tapped hidden state (output of block align_depth).
    const double* hidden =
        acts.block_io[static_cast<std::size_t>(cfg.align_depth)].data();
    nn::linear_fwd(hidden, P("proj.w1"), P("proj.b1"), acts.p1.data(), S, D, D);
    nn::silu_fwd(acts.p1.data(), acts.p1s.data(), S * D);
    nn::linear_fwd(acts.p1s.data(), P("proj.w2"), P("proj.b2"), acts.proj.data(),
                   S, D, static_cast<std::size_t>(cfg.d_vf));

    out.hidden_at_n.assign(hidden, hidden + S * D);
    out.projected = acts.proj;
    return out;
}

// ---------------------------------------------------------------- backward ---
// Accumulates d(loss)/d(params) into grad given upstream gradients on the
// three outputs. Zero-size spans mean "no gradient from that output". The
// activations must come from the matching forward call.
inline void backward(const Vec& params, const NetConfig& cfg,
                     const ParamIndex& ix, const Activations& acts,
                     std::span<const double> gv_z, std::span<const double> gv_cls,
                     std::span<const double> gproj, Vec& grad) {
    const std::size_t S = static_cast<std::size_t>(cfg.seq_len());
    const std::size_t D = static_cast<std::size_t>(cfg.d_model);
    const std::size_t N = static_cast<std::size_t>(cfg.tokens);
    const std::size_t L = static_cast<std::size_t>(cfg.channels);
    const std::size_t H = static_cast<std::size_t>(cfg.heads);
    const std::size_t hd = D / H;
    const std::size_t tok_off = cfg.has_token0() ? 1 : 0;
    require_shape(grad.size() == ix.total, "backward: grad size mismatch");

    auto P = [&](const char* name) { return ix.view(params, name).data(); };
    auto G = [&](const std::string& name) { return grad.data() + ix.find(name).offset; };

    static thread_local Vec ghf, glnf, gx, gxp, gmod, gconds, gh, gqkv, gm1,
        gq, gk, gv, gattno, gp1s, gscratch;
    ghf.assign(S * D, 0.0);
    gconds.assign(D, 0.0);

    // Heads.
    if (!gv_z.empty()) {
        require_shape(gv_z.size() == N * L, "backward: gv_z size");
        nn::linear_bwd(gv_z.data(), acts.hf.data() + tok_off * D, P("head_z.w"),
                       ghf.data() + tok_off * D, G("head_z.w"), G("head_z.b"), N,
                       D, L);
    }
    if (!gv_cls.empty()) {
        require_shape(cfg.has_token0() &&
                          gv_cls.size() == static_cast<std::size_t>(cfg.d_head_cls()),
                      "backward: gv_cls size");
        nn::linear_bwd(gv_cls.data(), acts.hf.data(), P("head_cls.w"), ghf.data(),
                       G("head_cls.w"), G("head_cls.b"), 1, D,
                       static_cast<std::size_t>(cfg.d_head_cls()));
    }

    // Final adaLN.
    glnf.assign(S * D, 0.0);
    gmod.assign(2 * D, 0.0);
    nn::modulate_bwd(ghf.data(), acts.lnf.data(), acts.modf.data(), glnf.data(),
                     gmod.data(), gmod.data() + D, S, D);
    nn::linear_bwd(gmod.data(), acts.conds.data(), P("final.ada.w"),
                   gconds.data(), G("final.ada.w"), G("final.ada.b"), 1, D,
                   2 * D);
    gx.assign(S * D, 0.0);  // grad wrt block_io[depth]
    nn::layernorm_bwd(glnf.data(), acts.block_io[static_cast<std::size_t>(cfg.depth)].data(),
                      acts.meanf.data(), acts.rstdf.data(), gx.data(), S, D);

    // Projector gradient enters at the tapped block output.
    static thread_local Vec ghidden;
    ghidden.assign(S * D, 0.0);
    if (!gproj.empty()) {
        require_shape(gproj.size() == S * static_cast<std::size_t>(cfg.d_vf),
                      "backward: gproj size");
        gp1s.assign(S * D, 0.0);
        nn::linear_bwd(gproj.data(), acts.p1s.data(), P("proj.w2"), gp1s.data(),
                       G("proj.w2"), G("proj.b2"), S, D,
                       static_cast<std::size_t>(cfg.d_vf));
        gscratch.assign(S * D, 0.0);
        nn::silu_bwd(gp1s.data(), acts.p1.data(), gscratch.data(), S * D);
        const double* hidden =
            acts.block_io[static_cast<std::size_t>(cfg.align_depth)].data();
        nn::linear_bwd(gscratch.data(), hidden, P("proj.w1"), ghidden.data(),
                       G("proj.w1"), G("proj.b1"), S, D, D);
    }

    // Blocks in reverse. gx holds grad wrt block_io[i+1] entering iteration i.
    for (int i = cfg.depth - 1; i >= 0; --i) {
        if (i + 1 == cfg.align_depth)
            axpy(1.0, ghidden.data(), gx.data(), S * D);

        const auto& b = acts.blocks[static_cast<std::size_t>(i)];
        const std::string pre = "block" + std::to_string(i) + ".";
        auto BP = [&](const char* s) { return ix.view(params, pre + s).data(); };
        auto BG = [&](const char* s) { return grad.data() + ix.find(pre + s).offset; };
        const double* xin = acts.block_io[static_cast<std::size_t>(i)].data();
        const double* g1 = b.mod.data() + 2 * D;
        const double* g2 = b.mod.data() + 5 * D;
        gmod.assign(6 * D, 0.0);

        // MLP half: xout = xmid + g2 .* m2
        gxp.assign(S * D, 0.0);  // grad wrt xmid
        gh.assign(S * D, 0.0);   // grad wrt m2
        nn::gated_residual_bwd(gx.data(), g2, b.m2.data(), gxp.data(), gh.data(),
                               gmod.data() + 5 * D, S, D);
        gm1.assign(S * 4 * D, 0.0);
        nn::linear_bwd(gh.data(), b.m1s.data(), BP("mlp.w2"), gm1.data(),
                       BG("mlp.w2"), BG("mlp.b2"), S, 4 * D, D);
        gscratch.assign(S * 4 * D, 0.0);
        nn::silu_bwd(gm1.data(), b.m1.data(), gscratch.data(), S * 4 * D);
        gh.assign(S * D, 0.0);  // grad wrt h2
        nn::linear_bwd(gscratch.data(), b.h2.data(), BP("mlp.w1"), gh.data(),
                       BG("mlp.w1"), BG("mlp.b1"), S, D, 4 * D);
        gscratch.assign(S * D, 0.0);  // grad wrt ln2
        nn::modulate_bwd(gh.data(), b.ln2.data(), b.mod.data() + 3 * D,
                         gscratch.data(), gmod.data() + 3 * D,
                         gmod.data() + 4 * D, S, D);
        nn::layernorm_bwd(gscratch.data(), b.xmid.data(), b.mean2.data(),
                          b.rstd2.data(), gxp.data(), S, D);

        // Attention half: xmid = xin + g1 .* ao
        gx.assign(S * D, 0.0);  // grad wrt xin
        gh.assign(S * D, 0.0);  // grad wrt ao
        nn::gated_residual_bwd(gxp.data(), g1, b.ao.data(), gx.data(), gh.data(),
                               gmod.data() + 2 * D, S, D);
        gattno.assign(S * D, 0.0);
        nn::linear_bwd(gh.data(), b.attno.data(), BP("attn_out.w"), gattno.data(),
                       BG("attn_out.w"), BG("attn_out.b"), S, D, D);

        gq.assign(S * D, 0.0);
        gk.assign(S * D, 0.0);
        gv.assign(S * D, 0.0);
        static thread_local Vec qbuf, kbuf, vbuf;
        qbuf.resize(S * D); kbuf.resize(S * D); vbuf.resize(S * D);
        for (std::size_t r = 0; r < S; ++r) {
            const double* src = b.qkv.data() + r * 3 * D;
            std::copy_n(src, D, qbuf.data() + r * D);
            std::copy_n(src + D, D, kbuf.data() + r * D);
            std::copy_n(src + 2 * D, D, vbuf.data() + r * D);
        }
        nn::attention_bwd(gattno.data(), qbuf.data(), kbuf.data(), vbuf.data(),
                          b.probs.data(), gq.data(), gk.data(), gv.data(), S, H,
                          hd);
        gqkv.assign(S * 3 * D, 0.0);
        for (std::size_t r = 0; r < S; ++r) {
            double* dst = gqkv.data() + r * 3 * D;
            std::copy_n(gq.data() + r * D, D, dst);
            std::copy_n(gk.data() + r * D, D, dst + D);
            std::copy_n(gv.data() + r * D, D, dst + 2 * D);
        }
        gh.assign(S * D, 0.0);  // grad wrt h1
        nn::linear_bwd(gqkv.data(), b.h1.data(), BP("qkv.w"), gh.data(),
                       BG("qkv.w"), BG("qkv.b"), S, D, 3 * D);
        gscratch.assign(S * D, 0.0);  // grad wrt ln1
        nn::modulate_bwd(gh.data(), b.ln1.data(), b.mod.data(), gscratch.data(),
                         gmod.data(), gmod.data() + D, S, D);
        nn::layernorm_bwd(gscratch.data(), xin, b.mean1.data(), b.rstd1.data(),
                          gx.data(), S, D);

        nn::linear_bwd(gmod.data(), acts.conds.data(), BP("ada.w"), gconds.data(),
                       BG("ada.w"), BG("ada.b"), 1, D, 6 * D);
    }

    // Token embeddings. gx is now grad wrt block_io[0].
    nn::linear_bwd(gx.data() + tok_off * D, acts.z_t.data(), P("patch_embed.w"),
                   nullptr, G("patch_embed.w"), G("patch_embed.b"), N, L, D);
    if (cfg.has_token0()) {
        if (cfg.cls_variant == ClsVariant::LearnableToken) {
            axpy(1.0, gx.data(), G("token0"), D);
        } else {
            nn::linear_bwd(gx.data(), acts.cls_t.data(), P("cls_embed.w"), nullptr,
                           G("cls_embed.w"), G("cls_embed.b"), 1,
                           static_cast<std::size_t>(cfg.d_sig()), D);
        }
        if (cfg.use_pos_embed) axpy(1.0, gx.data(), G("pos_cls"), D);
    }

    // Conditioning path: cond = t_mlp(t) + label_embed[label], conds = silu(cond).
    gscratch.assign(D, 0.0);  // grad wrt cond
    nn::silu_bwd(gconds.data(), acts.cond.data(), gscratch.data(), D);
    axpy(1.0, gscratch.data(),
         G("label_embed") + static_cast<std::size_t>(acts.label) * D, D);
    gh.assign(D, 0.0);  // grad wrt c1s
    nn::linear_bwd(gscratch.data(), acts.c1s.data(), P("t_mlp.w2"), gh.data(),
                   G("t_mlp.w2"), G("t_mlp.b2"), 1, D, D);
    gscratch.assign(D, 0.0);
    nn::silu_bwd(gh.data(), acts.c1.data(), gscratch.data(), D);
    nn::linear_bwd(gscratch.data(), acts.fs.data(), P("t_mlp.w1"), nullptr,
                   G("t_mlp.w1"), G("t_mlp.b1"), 1,
                   static_cast<std::size_t>(cfg.t_freq()), D);
}

// ------------------------------------------------------------- checkpoint ---
namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline void put_f64(std::ostream& os, double d) {
    put_u64(os, std::bit_cast<std::uint64_t>(d));
}

inline double get_f64(std::istream& is) {
    return std::bit_cast<double>(get_u64(is));
}

inline void put_str(std::ostream& os, const std::string& s) {
    put_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is) {
    const auto n = get_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

inline void put_vec(std::ostream& os, const Vec& v) {
    put_u64(os, v.size());
    for (double d : v) put_f64(os, d);
}

inline Vec get_vec(std::istream& is) {
    const auto n = get_u64(is);
    Vec v(n);
    for (auto& d : v) d = get_f64(is);
    return v;
}

}  // namespace detail

inline constexpr std::uint64_t kCheckpointMagic = 0x314b504347455224ull;  // "$REGCPK1"
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Single-file checkpoint: config, named-shape index, params / EMA / optimizer
// moments, step and rng state. All scalars little-endian; doubles as raw
// IEEE-754 bits, so reload is bit-exact.
inline void save_checkpoint(const std::string& path, const DenoiserState& st) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("save_checkpoint: cannot open " + path);
    detail::put_u64(os, kCheckpointMagic);
    detail::put_u64(os, kCheckpointVersion);

    const NetConfig& c = st.cfg;
    detail::put_u64(os, static_cast<std::uint64_t>(c.depth));
    detail::put_u64(os, static_cast<std::uint64_t>(c.d_model));
    detail::put_u64(os, static_cast<std::uint64_t>(c.heads));
    detail::put_u64(os, static_cast<std::uint64_t>(c.tokens));
    detail::put_u64(os, static_cast<std::uint64_t>(c.channels));
    detail::put_u64(os, static_cast<std::uint64_t>(c.align_depth));
    detail::put_u64(os, static_cast<std::uint64_t>(c.num_classes));
    detail::put_u64(os, static_cast<std::uint64_t>(c.d_vf));
    detail::put_str(os, to_string(c.cls_variant));
    detail::put_u64(os, c.use_pos_embed ? 1 : 0);

    detail::put_u64(os, st.index.entries.size());
    for (const auto& e : st.index.entries) {
        detail::put_str(os, e.name);
        detail::put_u64(os, e.rows);
        detail::put_u64(os, e.cols);
        detail::put_u64(os, e.offset);
    }
    detail::put_u64(os, st.seed);
    detail::put_u64(os, static_cast<std::uint64_t>(st.step));
    for (auto w : st.rng_state) detail::put_u64(os, w);
    detail::put_vec(os, st.params);
    detail::put_vec(os, st.ema);
    detail::put_vec(os, st.m);
    detail::put_vec(os, st.v);
    if (!os) throw io_error("save_checkpoint: write failed for " + path);
}

inline DenoiserState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("load_checkpoint: cannot open " + path);
    if (detail::get_u64(is) != kCheckpointMagic)
        throw io_error("load_checkpoint: bad magic in " + path);
    if (detail::get_u64(is) != kCheckpointVersion)
        throw io_error("load_checkpoint: unsupported version in " + path);

    DenoiserState st;
    NetConfig& c = st.cfg;
    c.depth = static_cast<int>(detail::get_u64(is));
    c.d_model = static_cast<int>(detail::get_u64(is));
    c.heads = static_cast<int>(detail::get_u64(is));
    c.tokens = static_cast<int>(detail::get_u64(is));
    c.channels = static_cast<int>(detail::get_u64(is));
    c.align_depth = static_cast<int>(detail::get_u64(is));
    c.num_classes = static_cast<int>(detail::get_u64(is));
    c.d_vf = static_cast<int>(detail::get_u64(is));
    c.cls_variant = cls_variant_from_string(detail::get_str(is));
    c.use_pos_embed = detail::get_u64(is) != 0;

    const auto n_entries = detail::get_u64(is);
    st.index.entries.resize(n_entries);
    st.index.total = 0;
    for (auto& e : st.index.entries) {
        e.name = detail::get_str(is);
        e.rows = detail::get_u64(is);
        e.cols = detail::get_u64(is);
        e.offset = detail::get_u64(is);
        st.index.total += e.size();
    }
    st.seed = detail::get_u64(is);
    st.step = static_cast<std::int64_t>(detail::get_u64(is));
    for (auto& w : st.rng_state) w = detail::get_u64(is);
    st.params = detail::get_vec(is);
    st.ema = detail::get_vec(is);
    st.m = detail::get_vec(is);
    st.v = detail::get_vec(is);
    if (!is) throw io_error("load_checkpoint: truncated file " + path);

    // Integrity: the stored index must match one rebuilt from the config.
    const ParamIndex rebuilt = build_param_index(c);
    if (rebuilt.total != st.index.total ||
        rebuilt.entries.size() != st.index.entries.size())
        throw io_error("load_checkpoint: index does not match config in " + path);
    if (st.params.size() != st.index.total || st.ema.size() != st.index.total ||
        st.m.size() != st.index.total || st.v.size() != st.index.total)
        throw io_error("load_checkpoint: tensor sizes do not match index in " + path);
    return st;
}

}  // namespace reg
