#pragma once

#include <cstddef>
#include <span>

#include "reg/common.hpp"
#include "reg/kernels.hpp"

namespace reg {

struct LossWeights {
    double beta = 0.03;   // class-token velocity term weight
    double lambda = 0.5;  // alignment term weight
};

struct PredLoss {
    double total = 0.0;
    double z_term = 0.0;    // mean squared error over latent velocity entries
    double cls_term = 0.0;  // mean squared error over class-token entries (unweighted)
};

// L_pred = MSE(v_z, target_z) + beta * MSE(v_cls, target_cls). Both MSEs are
// means over all elements, so beta's effect does not depend on dimensions.
// The cls term is omitted when no target exists (baseline / learnable-token).
// When grad buffers are given, accumulates d L_pred / d v into them.
inline PredLoss loss_pred(std::span<const double> v_z,
                          std::span<const double> vt_z,
                          std::span<const double> v_cls,
                          std::span<const double> vt_cls, const LossWeights& w,
                          std::span<double> gv_z = {},
                          std::span<double> gv_cls = {}) {
    require_shape(v_z.size() == vt_z.size(), "loss_pred: latent shape mismatch");
    require_shape(v_cls.size() == vt_cls.size(), "loss_pred: cls shape mismatch");
    PredLoss out;
    out.z_term = nn::mse(v_z.data(), vt_z.data(), v_z.size(),
                         gv_z.empty() ? nullptr : gv_z.data(), 1.0);
    if (!v_cls.empty()) {
        out.cls_term = nn::mse(v_cls.data(), vt_cls.data(), v_cls.size(),
                               gv_cls.empty() ? nullptr : gv_cls.data(), w.beta);
    }
    out.total = out.z_term + w.beta * out.cls_term;
    return out;
}

struct RepaLoss {
    double value = 0.0;       // -(1/R) sum of row cosines, in [-1, 1]
    int zero_norm_rows = 0;   // rows where cosine was defined as 0
};

// L_REPA: negative mean of row-wise cosine similarity between the projected
// hidden states and the frozen teacher rows. Callers apply the token<->teacher
// index map before this call; both inputs are [rows x d]. Zero-norm rows score
// 0 and are counted for the caller's abort threshold.
inline RepaLoss loss_repa(std::span<const double> projected,
                          std::span<const double> F0, std::size_t rows,
                          std::size_t d, std::span<double> gproj = {}) {
    require_shape(projected.size() == rows * d && F0.size() == rows * d,
                  "loss_repa: shape mismatch");
    require_domain(rows > 0, "loss_repa: no rows");
    RepaLoss out;
    const double wrow = -1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        bool degenerate = false;
        const double c =
            nn::cosine(projected.data() + r * d, F0.data() + r * d, d,
                       gproj.empty() ? nullptr : gproj.data() + r * d, wrow,
                       &degenerate);
        if (degenerate) ++out.zero_norm_rows;
        out.value += wrow * c;
    }
    return out;
}

// L_total = L_pred + lambda * L_REPA.
inline double loss_total(double pred, double repa, const LossWeights& w) {
    return pred + w.lambda * repa;
}

}  // namespace reg
