#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "puyun/errors.hpp"

namespace puyun {

// Deterministic random stream. Wraps std::mt19937_64 (whose output sequence
// is pinned by the standard) and converts to floats/normals with explicit
// bit arithmetic instead of std::*_distribution, whose outputs vary between
// standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller, caching the spare value.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // Normal(0, stddev) restricted to [lo, hi] by rejection.
    double truncated_normal(double stddev, double lo, double hi) {
        for (;;) {
            double v = normal() * stddev;
            if (v >= lo && v <= hi) return v;
        }
    }

    // Uniform integer in [lo, hi], inclusive, via rejection sampling.
    int uniform_int(int lo, int hi) {
        if (hi < lo) throw UsageError("Rng::uniform_int: empty range");
        std::uint64_t n = static_cast<std::uint64_t>(hi - lo) + 1;
        std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
        std::uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return lo + static_cast<int>(v % n);
    }

    // splitmix64 finalizer; used to derive independent child streams from
    // (seed, counter...) tuples so results do not depend on thread schedule.
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    static std::uint64_t mix3(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
        return mix(mix(a, b), c);
    }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace puyun
