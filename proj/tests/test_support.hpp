#pragma once

// Test-only oracles, shared by the unit suite and the acceptance suite, and
// deliberately independent of the library implementations they check.

#include <algorithm>
#include <cmath>
#include <vector>

#include "reg/metrics.hpp"
#include "reg/rng.hpp"

namespace reg::testsupport {

inline FeatureSet random_features(std::size_t n, std::size_t d,
                                  std::uint64_t seed, double scale = 1.0) {
    FeatureSet f;
    f.n = n;
    f.d = d;
    f.X.resize(n * d);
    Rng rng(seed);
    for (auto& v : f.X) v = scale * rng.normal();
    return f;
}

// Independent brute-force CKNNA: naive loops, no shared machinery with the
// library implementation. Kernel = inner products of column-centered
// features; knn by scanning for the k largest off-diagonal kernel entries
// (ties toward the lower index); alignment sums over ordered pairs with
// doubly-centered kernels.
double cknna_bruteforce(const FeatureSet& A, const FeatureSet& B, int k) {
    const std::size_t n = A.n;
    auto center = [](const FeatureSet& F) {
        std::vector<std::vector<double>> X(F.n, std::vector<double>(F.d));
        for (std::size_t j = 0; j < F.d; ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < F.n; ++i) mu += F.X[i * F.d + j];
            mu /= static_cast<double>(F.n);
            for (std::size_t i = 0; i < F.n; ++i) X[i][j] = F.X[i * F.d + j] - mu;
        }
        return X;
    };
    auto kernel = [&](const std::vector<std::vector<double>>& X) {
        std::vector<std::vector<double>> K(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t q = 0; q < X[i].size(); ++q)
                    K[i][j] += X[i][q] * X[j][q];
        return K;
    };
    auto doubly_center = [&](const std::vector<std::vector<double>>& K) {
        std::vector<double> rm(n, 0.0);
        double tot = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) rm[i] += K[i][j];
            rm[i] /= static_cast<double>(n);
            tot += rm[i];
        }
        tot /= static_cast<double>(n);
        auto Kb = K;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                Kb[i][j] = K[i][j] - rm[i] - rm[j] + tot;
        return Kb;
    };
    auto knn_of = [&](const std::vector<std::vector<double>>& K, std::size_t i) {
        std::vector<int> chosen;
        std::vector<bool> used(n, false);
        used[i] = true;
        for (int pick = 0; pick < k; ++pick) {
            int best = -1;
            for (std::size_t j = 0; j < n; ++j) {
                if (used[j]) continue;
                if (best < 0 || K[i][j] > K[i][static_cast<std::size_t>(best)])
                    best = static_cast<int>(j);
            }
            used[static_cast<std::size_t>(best)] = true;
            chosen.push_back(best);
        }
        return chosen;
    };

    const auto Ka = kernel(center(A));
    const auto Kb = kernel(center(B));
    const auto Kab = doubly_center(Ka);
    const auto Kbb = doubly_center(Kb);
    double skl = 0.0, skk = 0.0, sll = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto na = knn_of(Ka, i);
        const auto nb = knn_of(Kb, i);
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const bool ina =
                std::find(na.begin(), na.end(), static_cast<int>(j)) != na.end();
            const bool inb =
                std::find(nb.begin(), nb.end(), static_cast<int>(j)) != nb.end();
            if (ina && inb) skl += Kab[i][j] * Kbb[i][j];
            if (ina) skk += Kab[i][j] * Kab[i][j];
            if (inb) sll += Kbb[i][j] * Kbb[i][j];
        }
    }
    return skl / std::sqrt(skk * sll);
}

}  // namespace reg::testsupport
