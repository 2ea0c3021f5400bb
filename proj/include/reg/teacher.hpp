#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "reg/common.hpp"
#include "reg/linalg.hpp"
#include "reg/rng.hpp"

namespace reg {

// Frozen synthetic stand-in for a vision foundation encoder. Maps a clean
// latent grid to dense per-patch features f0 and a single class token cls0.
// The class token blends a fixed per-class codebook direction with pooled
// patch features, so it carries both class identity and sample-level content.
struct TeacherSpec {
    int d_vf = 64;   // teacher feature dim
    int tokens = 16; // N = grid*grid, patch size 1
    int channels = 2;
    int num_classes = 8;
    double gamma = 0.25;  // pooled-feature blend in cls0
    std::uint64_t seed = 23;
    std::vector<double> codebook;    // [num_classes x d_vf], unit rows
    std::vector<double> patch_proj;  // [channels x d_vf]

    std::span<const double> codebook_row(int label) const {
        require_domain(label >= 0 && label < num_classes,
                       "teacher: label out of range");
        return {codebook.data() + static_cast<std::size_t>(label) * d_vf,
                static_cast<std::size_t>(d_vf)};
    }
};

struct TeacherFeatures {
    int tokens = 0;
    int d_vf = 0;
    std::vector<double> f0;   // [tokens x d_vf]
    std::vector<double> cls0; // [d_vf], unit norm
    // Concatenation [f0; cls0]: rows 0..N-1 are f0, row N is cls0.
    std::vector<double> F0;   // [(tokens+1) x d_vf]
};

inline TeacherSpec make_teacher(int num_classes, int d_vf, int grid,
                                int channels, std::uint64_t seed) {
    TeacherSpec t;
    t.d_vf = d_vf;
    t.tokens = grid * grid;
    t.channels = channels;
    t.num_classes = num_classes;
    t.seed = seed;

    Rng rng = substream(seed, stream_tag::init, 0x7eac);

    // Codebook rows: unit-norm, pairwise |cos| <= 0.2, by seeded rejection.
    t.codebook.resize(static_cast<std::size_t>(num_classes) * d_vf);
    for (int k = 0; k < num_classes; ++k) {
        double* row = t.codebook.data() + static_cast<std::size_t>(k) * d_vf;
        for (int attempt = 0; attempt < 1000; ++attempt) {
            for (int i = 0; i < d_vf; ++i) row[i] = rng.normal();
            const double nrm = norm2(row, d_vf);
            for (int i = 0; i < d_vf; ++i) row[i] /= nrm;
            bool ok = true;
            for (int j = 0; j < k && ok; ++j) {
                const double* other = t.codebook.data() + static_cast<std::size_t>(j) * d_vf;
                if (std::abs(dot(row, other, d_vf)) > 0.2) ok = false;
            }
            if (ok) break;
            if (attempt == 999)
                throw domain_error("make_teacher: could not separate codebook rows");
        }
    }

    // Patch projection, scaled so tanh neither saturates nor stays linear for
    // O(1) latents.
    t.patch_proj.resize(static_cast<std::size_t>(channels) * d_vf);
    const double scale = 1.2 / std::sqrt(static_cast<double>(channels));
    for (auto& w : t.patch_proj) w = scale * rng.normal();
    return t;
}

// Dense features only (no label needed): f0[p] = tanh(patch_proj^T z[p]).
inline void teacher_patch_features(const TeacherSpec& spec,
                                   std::span<const double> z0,
                                   std::span<double> f0_out) {
    const int N = spec.tokens;
    const int L = spec.channels;
    const int D = spec.d_vf;
    require_shape(static_cast<int>(z0.size()) == N * L,
                  "teacher: latent size mismatch");
    require_shape(static_cast<int>(f0_out.size()) == N * D,
                  "teacher: feature size mismatch");
    for (int p = 0; p < N; ++p) {
        const double* z = z0.data() + static_cast<std::size_t>(p) * L;
        double* f = f0_out.data() + static_cast<std::size_t>(p) * D;
        for (int j = 0; j < D; ++j) {
            double acc = 0.0;
            for (int c = 0; c < L; ++c)
                acc += z[c] * spec.patch_proj[static_cast<std::size_t>(c) * D + j];
            f[j] = std::tanh(acc);
        }
    }
}

// Spatially averaged dense feature of one latent; the feature-space embedding
// used by the Frechet metric.
inline void teacher_pooled_feature(const TeacherSpec& spec,
                                   std::span<const double> z0,
                                   std::span<double> out) {
    std::vector<double> f0(static_cast<std::size_t>(spec.tokens) * spec.d_vf);
    teacher_patch_features(spec, z0, f0);
    require_shape(static_cast<int>(out.size()) == spec.d_vf,
                  "teacher: pooled feature size");
    std::fill(out.begin(), out.end(), 0.0);
    for (int p = 0; p < spec.tokens; ++p)
        axpy(1.0 / spec.tokens, f0.data() + static_cast<std::size_t>(p) * spec.d_vf,
             out.data(), spec.d_vf);
}

inline TeacherFeatures teacher_encode(const TeacherSpec& spec,
                                      std::span<const double> z0, int label) {
    const int N = spec.tokens;
    const int D = spec.d_vf;
    TeacherFeatures out;
    out.tokens = N;
    out.d_vf = D;
    out.f0.resize(static_cast<std::size_t>(N) * D);
    teacher_patch_features(spec, z0, out.f0);

    auto code = spec.codebook_row(label);
    out.cls0.resize(D);
    for (int j = 0; j < D; ++j) {
        double pooled = 0.0;
        for (int p = 0; p < N; ++p) pooled += out.f0[static_cast<std::size_t>(p) * D + j];
        pooled /= N;
        out.cls0[j] = code[j] + spec.gamma * pooled;
    }
    const double nrm = norm2(out.cls0.data(), D);
    require_domain(nrm > 0.0, "teacher: degenerate cls0");
    for (auto& v : out.cls0) v /= nrm;

    out.F0.resize(static_cast<std::size_t>(N + 1) * D);
    std::copy(out.f0.begin(), out.f0.end(), out.F0.begin());
    std::copy(out.cls0.begin(), out.cls0.end(),
              out.F0.begin() + static_cast<std::size_t>(N) * D);
    return out;
}

}  // namespace reg
