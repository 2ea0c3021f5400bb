#include <doctest.h>

#include <cmath>
#include "reg/linalg.hpp"

#include "reg/rng.hpp"
#include "reg/schedule.hpp"
#include "reg/synthdata.hpp"

using namespace reg;

TEST_CASE("mixture spec enforces mean separation and determinism") {
    const MixtureSpec a = default_desk_spec();
    const MixtureSpec b = default_desk_spec();
    CHECK(a.means == b.means);

    const int d = a.latent_dim();
    CHECK(d == 32);
    for (int i = 0; i < a.num_components(); ++i)
        for (int j = i + 1; j < a.num_components(); ++j) {
            double d2 = 0.0;
            for (int q = 0; q < d; ++q) {
                const double diff = a.mean(i)[q] - a.mean(j)[q];
                d2 += diff * diff;
            }
            CHECK(std::sqrt(d2) >= 4.0 * a.component_std);
        }
}

TEST_CASE("sample_batch: degenerate std, labels, determinism") {
    MixtureSpec spec = make_mixture_spec(3, 2, 2, 1, 0.0, 11);
    Rng r1(5), r2(5);
    const SampleBatch b1 = sample_batch(spec, 64, r1);
    const SampleBatch b2 = sample_batch(spec, 64, r2);
    CHECK(b1.z0 == b2.z0);
    CHECK(b1.component == b2.component);

    for (int i = 0; i < b1.batch; ++i) {
        CHECK(b1.label[i] == spec.class_of_component(b1.component[i]));
        auto mu = spec.mean(b1.component[i]);
        for (int q = 0; q < spec.latent_dim(); ++q)
            CHECK(b1.row(i)[q] == mu[q]);  // std = 0: exactly the mean
    }
    CHECK_THROWS_AS({ Rng r(1); sample_batch(spec, 0, r); }, domain_error);
}

TEST_CASE("sample_batch CLT bound on the mean") {
    MixtureSpec spec;
    spec.num_classes = 1;
    spec.components_per_class = 1;
    spec.grid = 1;
    spec.channels = 2;  // d = 2
    spec.component_std = 1.0;
    spec.means = {0.0, 0.0};
    Rng rng(123);
    const int B = 100000;
    const SampleBatch b = sample_batch(spec, B, rng);
    double m0 = 0.0, m1 = 0.0;
    for (int i = 0; i < B; ++i) {
        m0 += b.z0[2 * static_cast<std::size_t>(i)];
        m1 += b.z0[2 * static_cast<std::size_t>(i) + 1];
    }
    m0 /= B;
    m1 /= B;
    const double bound = 3.0 / std::sqrt(static_cast<double>(B));
    CHECK(std::abs(m0) < bound);
    CHECK(std::abs(m1) < bound);
}

TEST_CASE("oracle velocity closed forms") {
    Schedule s;
    // Single component mu=0, std=1: v(x,t) = (2t-1)x/((1-t)^2+t^2).
    MixtureSpec one;
    one.num_classes = 1;
    one.components_per_class = 1;
    one.grid = 1;
    one.channels = 1;
    one.component_std = 1.0;
    one.means = {0.0};
    double v = 0.0;
    std::array<double, 1> x{1.0};
    oracle_velocity(x, 0.5, one, s, std::span<double>(&v, 1));
    CHECK(v == doctest::Approx(0.0).epsilon(1e-14));
    for (double t : {0.1, 0.33, 0.77}) {
        oracle_velocity(x, t, one, s, std::span<double>(&v, 1));
        const double g = (1 - t) * (1 - t) + t * t;
        CHECK(v == doctest::Approx((2 * t - 1) / g).epsilon(1e-12));
    }

    // Symmetric two-component mixture: v(0,t) = 0 by symmetry.
    MixtureSpec sym = one;
    sym.num_classes = 2;
    sym.means = {-0.7, 0.7};
    sym.component_std = 0.2;
    std::array<double, 1> zero{0.0};
    for (double t : {0.05, 0.4, 0.95}) {
        oracle_velocity(zero, t, sym, s, std::span<double>(&v, 1));
        CHECK(v == doctest::Approx(0.0).epsilon(1e-13));
    }

    // t -> 0 and t=1 endpoints evaluate without error.
    oracle_velocity(x, 0.0, one, s, std::span<double>(&v, 1));
    CHECK(v == doctest::Approx(-1.0).epsilon(1e-12));  // v(x,0) = -x: E[x0|x]=x, E[eps|x]=0
    oracle_velocity(x, 1.0, sym, s, std::span<double>(&v, 1));
    CHECK(std::isfinite(v));
}

TEST_CASE("oracle score: closed form, mode, finite differences") {
    Schedule s;
    MixtureSpec one;
    one.num_classes = 1;
    one.components_per_class = 1;
    one.grid = 1;
    one.channels = 1;
    one.component_std = 1.0;
    one.means = {0.0};
    double sc = 0.0;
    std::array<double, 1> x{1.0};
    oracle_score(x, 0.5, one, s, std::span<double>(&sc, 1));
    CHECK(sc == doctest::Approx(-2.0).epsilon(1e-13));
    CHECK_THROWS_AS(oracle_score(x, 0.0, one, s, std::span<double>(&sc, 1)),
                    domain_error);

    // At a mode of p_t the score vanishes. mu=0 single component: mode at 0.
    std::array<double, 1> zero{0.0};
    oracle_score(zero, 0.3, one, s, std::span<double>(&sc, 1));
    CHECK(sc == doctest::Approx(0.0).epsilon(1e-14));

    // Central finite differences of log p_t at random probes, d = 4.
    MixtureSpec ms = make_mixture_spec(2, 2, 2, 1, 0.3, 77);
    const int d = ms.latent_dim();
    Rng rng(9);
    Vec xx(d), grad(d);
    const double h = 1e-5;
    for (int probe = 0; probe < 100; ++probe) {
        for (auto& v : xx) v = 1.2 * rng.normal();
        const double t = rng.uniform(0.05, 0.999);
        oracle_score(xx, t, ms, s, grad);
        for (int i = 0; i < d; ++i) {
            Vec xp = xx, xm = xx;
            xp[static_cast<std::size_t>(i)] += h;
            xm[static_cast<std::size_t>(i)] -= h;
            const double fd = (oracle_log_density(xp, t, ms, s) -
                               oracle_log_density(xm, t, ms, s)) /
                              (2 * h);
            CHECK(grad[static_cast<std::size_t>(i)] ==
                  doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("score equals -sigma^{-1} E[eps|x] near t -> 0") {
    // The velocity/score relation holds down to tiny t where responsibilities
    // are near one-hot; exercises the log-space path.
    Schedule s;
    MixtureSpec ms = make_mixture_spec(3, 1, 2, 1, 0.2, 31);
    const int d = ms.latent_dim();
    Vec x(ms.mean(1).begin(), ms.mean(1).end());
    x[0] += 0.05;
    Vec v(d), s_ref(d), s_conv(d);
    for (double t : {1e-6, 1e-4, 1e-2}) {
        oracle_velocity(x, t, ms, s, v);
        oracle_score(x, t, ms, s, s_ref);
        score_from_velocity(v, x, t, s, s_conv);
        for (int i = 0; i < d; ++i)
            CHECK(s_conv[i] ==
                  doctest::Approx(s_ref[i]).epsilon(1e-7).scale(1e-3));
    }
}
