#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace rsoc {

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Hash of a seed and a tuple of counters.
constexpr std::uint64_t hash_counters(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                      std::uint64_t c = 0) noexcept {
    std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc908ULL);
    h = mix64(h ^ a);
    h = mix64(h ^ (b + 0x3c6ef372fe94f82bULL));
    h = mix64(h ^ (c + 0xa54ff53a5f1d36f1ULL));
    return h;
}

/// Uniform in (0, 1) from the top 53 bits.
constexpr double to_unit_open(std::uint64_t bits) noexcept {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal that is a pure function of (seed, a, b, c).
inline double counter_normal(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                             std::uint64_t c) noexcept {
    const std::uint64_t h = hash_counters(seed, a, b, c);
    const double u1 = to_unit_open(h);
    const double u2 = to_unit_open(mix64(h ^ 0x510e527fade682d1ULL));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Small sequential generator for sampling test inputs (hypothesis checks,
/// randomized instances). Deterministic given the seed.
class SampleRng {
public:
    explicit SampleRng(std::uint64_t seed) : state_(mix64(seed)) {}

    std::uint64_t next() noexcept {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix64(state_);
    }
    double uniform() noexcept { return to_unit_open(next()); }
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    double normal() noexcept {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t state_;
};

}  // namespace rsoc
