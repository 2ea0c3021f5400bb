#pragma once

#include <span>
#include <vector>

#include "reg/net.hpp"
#include "reg/teacher.hpp"

namespace reg {

// Per-sample entanglement signal for the active variant: the vector that is
// noised alongside the latent and carries the velocity target of token 0.
// Empty for None / LearnableToken.
inline void entanglement_signal(const NetConfig& cfg, const TeacherSpec& teacher,
                                std::span<const double> z0,
                                const TeacherFeatures& tf, Vec& out) {
    switch (cfg.cls_variant) {
        case ClsVariant::TeacherCls:
            out.assign(tf.cls0.begin(), tf.cls0.end());
            return;
        case ClsVariant::AvgTeacherFeature: {
            out.assign(static_cast<std::size_t>(teacher.d_vf), 0.0);
            for (int p = 0; p < teacher.tokens; ++p)
                axpy(1.0 / teacher.tokens,
                     tf.f0.data() + static_cast<std::size_t>(p) * teacher.d_vf,
                     out.data(), static_cast<std::size_t>(teacher.d_vf));
            return;
        }
        case ClsVariant::AvgLatentFeature: {
            const int L = cfg.channels;
            const int N = cfg.tokens;
            out.assign(static_cast<std::size_t>(L), 0.0);
            for (int p = 0; p < N; ++p)
                for (int c = 0; c < L; ++c)
                    out[static_cast<std::size_t>(c)] +=
                        z0[static_cast<std::size_t>(p) * L + c] / N;
            return;
        }
        default:
            out.clear();
            return;
    }
}

// Row pairing between projected hidden states and teacher rows for the
// alignment loss. The full mechanism pairs model token 0 with the teacher
// class-token row and tokens 1..N with the dense rows; every other
// configuration aligns dense rows only.
struct AlignMap {
    std::size_t rows = 0;       // number of aligned row pairs
    std::size_t proj_row0 = 0;  // first projected row that participates
};

inline AlignMap align_map(const NetConfig& cfg) {
    AlignMap m;
    if (cfg.cls_variant == ClsVariant::TeacherCls) {
        m.rows = static_cast<std::size_t>(cfg.tokens) + 1;
        m.proj_row0 = 0;
    } else {
        m.rows = static_cast<std::size_t>(cfg.tokens);
        m.proj_row0 = cfg.has_token0() ? 1 : 0;
    }
    return m;
}

// Teacher rows reordered to match projected rows proj_row0..: [cls0; f0] for
// the full mechanism, [f0] otherwise.
inline void align_targets(const NetConfig& cfg, const TeacherFeatures& tf,
                          Vec& tgt) {
    const std::size_t D = static_cast<std::size_t>(cfg.d_vf);
    const std::size_t N = static_cast<std::size_t>(cfg.tokens);
    if (cfg.cls_variant == ClsVariant::TeacherCls) {
        tgt.resize((N + 1) * D);
        std::copy(tf.cls0.begin(), tf.cls0.end(), tgt.begin());
        std::copy(tf.f0.begin(), tf.f0.end(), tgt.begin() + D);
    } else {
        tgt.assign(tf.f0.begin(), tf.f0.end());
    }
}

}  // namespace reg
