#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace reg {

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// xoshiro256++ with explicit, serializable state. std::normal_distribution is
// implementation-defined, so Gaussian draws are generated here (Box-Muller
// with a cached spare) to make every stream reproducible from its state words.
class Rng {
public:
    Rng() : Rng(0x9d5f0c59ull) {}

    explicit Rng(std::uint64_t seed) {
        std::uint64_t x = seed;
        for (auto& w : s_) w = splitmix64(x);
        has_spare_ = false;
        spare_ = 0.0;
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform on [0,1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform on [lo,hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) {
        // Rejection-free multiply-shift; bias is < 2^-64, irrelevant here.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    template <typename It>
    void fill_normal(It first, It last) {
        for (; first != last; ++first) *first = normal();
    }

    std::array<std::uint64_t, 4> state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) {
        s_ = s;
        has_spare_ = false;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> s_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Counter-keyed substream. All randomness in training and sampling is drawn
// from streams keyed by (seed, tag, a, b), never from a shared mutable stream,
// so runs are reproducible under any threading and resumable from any step.
inline Rng substream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                     std::uint64_t b = 0) {
    std::uint64_t x = seed;
    std::uint64_t h = splitmix64(x);
    x ^= tag * 0x9e3779b97f4a7c15ull;
    h ^= splitmix64(x);
    x ^= a * 0xc2b2ae3d27d4eb4full;
    h ^= splitmix64(x);
    x ^= b * 0x165667b19e3779f9ull;
    h ^= splitmix64(x);
    return Rng(h);
}

namespace stream_tag {
constexpr std::uint64_t data = 1;       // batch component/noise draws
constexpr std::uint64_t noise = 2;      // interpolation noise eps_z / eps_cls
constexpr std::uint64_t timestep = 3;   // per-sample t draws
constexpr std::uint64_t dropout = 4;    // label dropout coin flips
constexpr std::uint64_t init = 5;       // parameter initialization
constexpr std::uint64_t sampler = 6;    // sampler trajectories
constexpr std::uint64_t misc = 7;
}  // namespace stream_tag

}  // namespace reg
