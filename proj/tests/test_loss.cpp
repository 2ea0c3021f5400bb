#include <doctest.h>

#include <cmath>

#include "reg/loss.hpp"
#include "reg/rng.hpp"

using namespace reg;

TEST_CASE("prediction loss: exact, constant offsets, beta weighting") {
    const LossWeights w{};  // beta = 0.03, lambda = 0.5
    Rng rng(1);
    Vec vz(24), vcls(8);
    rng.fill_normal(vz.begin(), vz.end());
    rng.fill_normal(vcls.begin(), vcls.end());

    CHECK(loss_pred(vz, vz, vcls, vcls, w).total == 0.0);

    const double c = 0.7;
    Vec vz_off = vz;
    for (auto& v : vz_off) v += c;
    const PredLoss off_z = loss_pred(vz_off, vz, vcls, vcls, w);
    CHECK(off_z.total == doctest::Approx(c * c).epsilon(1e-12));

    Vec vcls_off = vcls;
    for (auto& v : vcls_off) v += c;
    const PredLoss off_c = loss_pred(vz, vz, vcls_off, vcls, w);
    CHECK(off_c.total == doctest::Approx(0.03 * c * c).epsilon(1e-12));
    CHECK(off_c.cls_term == doctest::Approx(c * c).epsilon(1e-12));

    // cls term omitted entirely when no target exists.
    const PredLoss no_cls = loss_pred(vz_off, vz, {}, {}, w);
    CHECK(no_cls.total == doctest::Approx(c * c).epsilon(1e-12));
    CHECK(no_cls.cls_term == 0.0);

    Vec small(3);
    CHECK_THROWS_AS(loss_pred(vz, small, vcls, vcls, w), shape_error);
}

TEST_CASE("alignment loss: identical, orthogonal, scaled rows") {
    const std::size_t rows = 5, d = 6;
    Rng rng(2);
    Vec F0(rows * d);
    rng.fill_normal(F0.begin(), F0.end());

    CHECK(loss_repa(F0, F0, rows, d).value == doctest::Approx(-1.0).epsilon(1e-12));

    Vec scaled = F0;
    for (auto& v : scaled) v *= 3.7;
    CHECK(loss_repa(scaled, F0, rows, d).value ==
          doctest::Approx(-1.0).epsilon(1e-12));

    // Row-wise orthogonal: swap a pair of coordinates with a sign flip.
    Vec ortho(rows * d, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        ortho[r * d + 0] = -F0[r * d + 1];
        ortho[r * d + 1] = F0[r * d + 0];
    }
    // Zero out remaining F0 coords in a copy so the rows are exactly orthogonal.
    Vec F0_2(rows * d, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        F0_2[r * d + 0] = F0[r * d + 0];
        F0_2[r * d + 1] = F0[r * d + 1];
    }
    CHECK(loss_repa(ortho, F0_2, rows, d).value ==
          doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("alignment loss: zero-norm rows counted, range bounded") {
    const std::size_t rows = 4, d = 3;
    Rng rng(3);
    Vec F0(rows * d), proj(rows * d);
    rng.fill_normal(F0.begin(), F0.end());
    rng.fill_normal(proj.begin(), proj.end());

    for (std::size_t q = 0; q < d; ++q) proj[2 * d + q] = 0.0;  // kill row 2
    const RepaLoss rl = loss_repa(proj, F0, rows, d);
    CHECK(rl.zero_norm_rows == 1);
    CHECK(rl.value >= -1.0);
    CHECK(rl.value <= 1.0);
}

TEST_CASE("alignment loss is a mean: duplicating rows leaves it unchanged") {
    const std::size_t rows = 6, d = 5;
    Rng rng(4);
    Vec F0(rows * d), proj(rows * d);
    rng.fill_normal(F0.begin(), F0.end());
    rng.fill_normal(proj.begin(), proj.end());
    const double base = loss_repa(proj, F0, rows, d).value;

    Vec F2(2 * rows * d), p2(2 * rows * d);
    std::copy(F0.begin(), F0.end(), F2.begin());
    std::copy(F0.begin(), F0.end(), F2.begin() + rows * d);
    std::copy(proj.begin(), proj.end(), p2.begin());
    std::copy(proj.begin(), proj.end(), p2.begin() + rows * d);
    CHECK(loss_repa(p2, F2, 2 * rows, d).value ==
          doctest::Approx(base).epsilon(1e-14));
}

TEST_CASE("alignment gradient is orthogonal to each projected row") {
    const std::size_t rows = 5, d = 7;
    Rng rng(5);
    Vec F0(rows * d), proj(rows * d), g(rows * d, 0.0);
    rng.fill_normal(F0.begin(), F0.end());
    rng.fill_normal(proj.begin(), proj.end());
    loss_repa(proj, F0, rows, d, g);
    for (std::size_t r = 0; r < rows; ++r)
        CHECK(std::abs(dot(g.data() + r * d, proj.data() + r * d, d)) < 1e-8);
}

TEST_CASE("total loss composition") {
    LossWeights w{};
    CHECK(loss_total(0.8, -0.6, w) == doctest::Approx(0.5).epsilon(1e-15));
    w.lambda = 0.0;
    CHECK(loss_total(0.8, -0.6, w) == 0.8);  // alignment disabled
    w.lambda = 0.5;
    CHECK(loss_total(0.0, -1.0, w) == -w.lambda);  // global floor
}
