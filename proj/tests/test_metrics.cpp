#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "reg/metrics.hpp"
#include "reg/rng.hpp"

using namespace reg;

#include "test_support.hpp"

using reg::testsupport::cknna_bruteforce;
using reg::testsupport::random_features;


TEST_CASE("cknna: self-alignment, symmetry, brute-force equivalence") {
    const FeatureSet A = random_features(32, 6, 1);
    const FeatureSet B = random_features(32, 6, 2);
    CHECK(cknna(A, A, 5) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cknna(A, B, 5) == doctest::Approx(cknna(B, A, 5)).epsilon(1e-12));

    const FeatureSet A8 = random_features(8, 4, 3);
    const FeatureSet B8 = random_features(8, 4, 4);
    CHECK(cknna(A8, B8, 2) ==
          doctest::Approx(cknna_bruteforce(A8, B8, 2)).epsilon(1e-12));
    // A few more sizes against the oracle.
    for (std::uint64_t s = 10; s < 14; ++s) {
        const FeatureSet X = random_features(12, 5, s);
        const FeatureSet Y = random_features(12, 5, s + 100);
        for (int k : {1, 3, 7})
            CHECK(cknna(X, Y, k) ==
                  doctest::Approx(cknna_bruteforce(X, Y, k)).epsilon(1e-12));
    }

    CHECK_THROWS_AS(cknna(A, B, 32), domain_error);  // k > n-1
    CHECK_THROWS_AS(cknna(A, random_features(16, 6, 9), 5), shape_error);
}

TEST_CASE("cknna is invariant under orthogonal feature maps") {
    const std::size_t n = 24, d = 5;
    const FeatureSet A = random_features(n, d, 7);
    // Random orthogonal Q via Gram-Schmidt of a seeded Gaussian matrix.
    Rng rng(8);
    Vec Q(d * d);
    for (auto& v : Q) v = rng.normal();
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t p = 0; p < c; ++p) {
            double proj = 0.0;
            for (std::size_t r = 0; r < d; ++r) proj += Q[r * d + c] * Q[r * d + p];
            for (std::size_t r = 0; r < d; ++r) Q[r * d + c] -= proj * Q[r * d + p];
        }
        double nrm = 0.0;
        for (std::size_t r = 0; r < d; ++r) nrm += Q[r * d + c] * Q[r * d + c];
        nrm = std::sqrt(nrm);
        for (std::size_t r = 0; r < d; ++r) Q[r * d + c] /= nrm;
    }
    FeatureSet AQ;
    AQ.n = n;
    AQ.d = d;
    AQ.X.assign(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c)
            for (std::size_t r = 0; r < d; ++r)
                AQ.X[i * d + c] += A.X[i * d + r] * Q[r * d + c];
    CHECK(cknna(A, AQ, 5) == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("cka equals the k=n-1 limit of cknna and is scale invariant") {
    const FeatureSet A = random_features(16, 4, 11);
    const FeatureSet B = random_features(16, 4, 12);
    CHECK(cka(A, A) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cknna(A, B, static_cast<int>(A.n) - 1) ==
          doctest::Approx(cka(A, B)).epsilon(1e-10));

    // Duplicating every column scales the kernel; the ratio is unchanged.
    FeatureSet Adup;
    Adup.n = A.n;
    Adup.d = 2 * A.d;
    Adup.X.resize(Adup.n * Adup.d);
    for (std::size_t i = 0; i < A.n; ++i)
        for (std::size_t j = 0; j < A.d; ++j) {
            Adup.X[i * Adup.d + j] = A.X[i * A.d + j];
            Adup.X[i * Adup.d + A.d + j] = A.X[i * A.d + j];
        }
    CHECK(cka(A, Adup) == doctest::Approx(1.0).epsilon(1e-12));

    // Degenerate: all rows equal -> centered kernel is zero.
    FeatureSet flat;
    flat.n = 8;
    flat.d = 3;
    flat.X.assign(24, 1.5);
    const FeatureSet A8 = random_features(8, 3, 13);
    CHECK_THROWS_AS(cka(flat, A8), domain_error);
    CHECK_THROWS_AS(cknna(flat, A8, 2), domain_error);
}

TEST_CASE("cos_to_codebook endpoints and random-vector concentration") {
    const TeacherSpec teacher = make_teacher(8, 64, 4, 2, 23);
    const int label = 3;
    auto code = teacher.codebook_row(label);
    Vec plus(code.begin(), code.end());
    CHECK(cos_to_codebook(plus, teacher, label) == doctest::Approx(1.0).epsilon(1e-12));
    Vec minus = plus;
    for (auto& v : minus) v = -v;
    CHECK(cos_to_codebook(minus, teacher, label) ==
          doctest::Approx(-1.0).epsilon(1e-12));

    bool degenerate = false;
    Vec zero(static_cast<std::size_t>(teacher.d_vf), 0.0);
    CHECK(cos_to_codebook(zero, teacher, label, &degenerate) == 0.0);
    CHECK(degenerate);

    // Random unit vectors in d=64: |cos| < 0.4 with probability > 0.999.
    Rng rng(31);
    Vec v(static_cast<std::size_t>(teacher.d_vf));
    int outliers = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        rng.fill_normal(v.begin(), v.end());
        if (std::abs(cos_to_codebook(v, teacher, label)) >= 0.4) ++outliers;
    }
    CHECK(outliers <= draws / 1000);
}

TEST_CASE("frechet distance: identity, 1-D means, 2-D closed-form oracle") {
    CHECK(frechet_distance({0.0, 1.0}, {1.0, 0.2, 0.2, 2.0}, {0.0, 1.0},
                           {1.0, 0.2, 0.2, 2.0}) ==
          doctest::Approx(0.0).epsilon(1e-10));
    CHECK(frechet_distance({0.0}, {1.0}, {3.0}, {1.0}) ==
          doctest::Approx(9.0).epsilon(1e-12));

    // 2-D random PSD pair vs an independent evaluation: the eigenvalues of
    // C = A B solve l^2 - tr(C) l + det(C) = 0, so
    // Tr((A B)^{1/2}) = sqrt(l1) + sqrt(l2).
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        auto make_psd = [&]() {
            const double a = rng.normal(), b = rng.normal(), c = rng.normal(),
                         d = rng.normal();
            return Vec{a * a + b * b + 0.1, a * c + b * d, a * c + b * d,
                       c * c + d * d + 0.1};
        };
        const Vec A = make_psd(), B = make_psd();
        const Vec mu1{rng.normal(), rng.normal()};
        const Vec mu2{rng.normal(), rng.normal()};
        const double trC = A[0] * B[0] + A[1] * B[2] + A[2] * B[1] + A[3] * B[3];
        const double detC = (A[0] * A[3] - A[1] * A[2]) * (B[0] * B[3] - B[1] * B[2]);
        const double disc = std::sqrt(std::max(0.0, trC * trC - 4.0 * detC));
        const double l1 = (trC + disc) / 2.0, l2 = (trC - disc) / 2.0;
        const double tr_sqrt = std::sqrt(std::max(0.0, l1)) + std::sqrt(std::max(0.0, l2));
        const double expected = (mu1[0] - mu2[0]) * (mu1[0] - mu2[0]) +
                                (mu1[1] - mu2[1]) * (mu1[1] - mu2[1]) + A[0] +
                                A[3] + B[0] + B[3] - 2.0 * tr_sqrt;
        CHECK(frechet_distance(mu1, A, mu2, B) ==
              doctest::Approx(expected).epsilon(1e-9));
    }

    CHECK_THROWS_AS(frechet_distance({0.0, 0.0}, {1.0, 0.9, 0.9, -1.0},
                                     {0.0, 0.0}, {1.0, 0.0, 0.0, 1.0}),
                    domain_error);  // not PSD
    CHECK_THROWS_AS(frechet_distance({0.0, 0.0}, {1.0, 0.5, 0.1, 1.0},
                                     {0.0, 0.0}, {1.0, 0.0, 0.0, 1.0}),
                    domain_error);  // not symmetric
}

TEST_CASE("fit_gaussian requires n >= d+1 and matches moments") {
    FeatureSet f = random_features(200, 3, 19);
    const GaussianFit g = fit_gaussian(f);
    CHECK(g.mean.size() == 3);
    FeatureSet small = random_features(3, 3, 20);
    CHECK_THROWS_AS(fit_gaussian(small), domain_error);
}

TEST_CASE("flops: XL overhead in range, closed form exact, monotone in N") {
    const NetConfig xl = xl_shape_config();
    const FlopsReport with = flops_report(xl, true);
    const FlopsReport without = flops_report(xl, false);
    CHECK(without.delta_pct == 0.0);
    CHECK(with.delta_pct >= 0.3);
    CHECK(with.delta_pct <= 0.5);
    CHECK(with.flops - without.flops == detail::extra_token_flops(xl));

    NetConfig desk;  // defaults
    const FlopsReport desk_with = flops_report(desk, true);
    const FlopsReport desk_without = flops_report(desk, false);
    CHECK(desk_with.flops - desk_without.flops == detail::extra_token_flops(desk));
    CHECK(desk_with.delta_pct > 0.5);  // one token among 16 is not negligible

    double prev = 1e9;
    for (int n : {16, 64, 256, 1024}) {
        NetConfig cfg = desk;
        cfg.tokens = n;
        const double d = flops_report(cfg, true).delta_pct;
        CHECK(d < prev);
        prev = d;
    }
}

TEST_CASE("eval_run produces a complete report on a tiny world") {
    const MixtureSpec spec = make_mixture_spec(3, 1, 2, 2, 0.15, 19);
    const TeacherSpec teacher = make_teacher(3, 12, 2, 2, 29);
    NetConfig net;
    net.depth = 2;
    net.d_model = 16;
    net.heads = 2;
    net.tokens = 4;
    net.channels = 2;
    net.align_depth = 1;
    net.num_classes = 3;
    net.d_vf = 12;
    DenoiserState st = init_state(net, 83);
    Rng prng(1);
    for (auto& p : st.params) p = 0.05 * prng.normal();
    st.ema = st.params;

    const Schedule sched;
    SamplerConfig scfg;
    scfg.steps = 12;
    EvalOptions opt;
    opt.n_samples = 16;
    opt.n_real = 32;
    opt.n_eval_cknna = 24;
    opt.cknna_k = 4;
    opt.t_grid = {0.25, 0.75};

    const EvalReport rep = eval_run(st, spec, teacher, scfg, sched, opt);
    CHECK(rep.frechet_per_class.size() == 3);
    for (double f : rep.frechet_per_class) {
        CHECK(std::isfinite(f));
        CHECK(f >= 0.0);
    }
    CHECK(std::isfinite(rep.cls_cosine_mean));
    CHECK(rep.cknna_by_layer.size() == 2);
    CHECK(rep.cknna_by_t.size() == 2);
    CHECK(rep.argmax_layer >= 1);
    CHECK(rep.argmax_layer <= 2);

    EvalOptions bad = opt;
    bad.n_samples = 4;  // < d_vf + 1
    CHECK_THROWS_AS(eval_run(st, spec, teacher, scfg, sched, bad), domain_error);
}
