// Copyright 2026 The stpyr Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace stpyr {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Seeded generator with platform-independent uniform/normal conversions.
/// std::*_distribution are implementation-defined, so the conversions are
/// spelled out here to keep artifacts bit-exact across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), gen_(splitmix64(seed)) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : gen_() % n; }

    bool bernoulli(double p) { return uniform() < p; }

    /// Standard normal via Box-Muller (no cached spare, so draws stay aligned).
    double normal() {
        const double u1 = 1.0 - uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Independent child stream derived from this generator's seed.
    Rng fork(std::uint64_t stream) const { return Rng(splitmix64(seed_ ^ splitmix64(stream + 1))); }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
};

}  // namespace stpyr
