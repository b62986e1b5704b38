#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace entroland {

/// Deterministic seeded pseudorandom stream (splitmix64 core). Used for
/// synthetic noise and stochastic block selection so that runs are
/// reproducible from the seed alone, independent of the platform's
/// std::random distributions.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    /// Uniform on (0, 1].
    double next_unit() noexcept {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    /// Unbiased uniform integer in [0, bound).
    std::uint64_t next_below(std::uint64_t bound) noexcept {
        const std::uint64_t limit = bound * ((~std::uint64_t{0} / bound));
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % bound;
    }

    /// Standard normal via Box-Muller; the paired deviate is cached.
    double next_gaussian() noexcept {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = next_unit();
        const double u2 = next_unit();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace entroland
