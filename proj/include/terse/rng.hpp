#pragma once

#include <cstdint>
#include <cmath>

namespace terse {

// splitmix64 finalizer; the basis for all seed derivation and counter RNG.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0) {
    return mix64(mix64(master ^ 0x6d656973746572ull) ^ mix64(stream * 0x100000001b3ull + index));
}

// Counter-based uniform in [0,1): the value depends only on the key tuple,
// never on call order, so dropout masks are reproducible across evaluation
// orders and worker counts.
inline double counter_uniform(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = mix64(seed ^ mix64(a ^ mix64(b ^ mix64(c))));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Small self-contained generator (xoshiro-style via repeated splitmix stream).
// All distributions are computed in-house so runs are reproducible independent
// of the standard library's  <random> distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 1) : state_(mix64(seed ^ 0x517cc1b727220a95ull)) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0,1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection-free multiply-shift (Lemire); bias is < 2^-64 and identical
        // across platforms
        unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

    double normal() {
        // Box-Muller, one value per call (cached pair)
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do { u1 = uniform(); } while (u1 <= 0.0);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<std::uint64_t>(last - first);
        for (std::uint64_t i = n; i > 1; --i) {
            std::uint64_t j = below(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace terse
