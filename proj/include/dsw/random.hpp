#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>

namespace dsw {

// splitmix64 finalizer, used to derive independent stream seeds from
// (seed, realization, stream) tuples.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return mix64(mix64(mix64(seed) ^ a) ^ b);
}

/// Portable random stream: std::mt19937_64 bits turned into doubles with
/// fixed formulas, so draws are identical on every standard library.
///  uniform:  (bits >> 11) * 2^-53
///  normal:   Box-Muller, cosine branch only (two uniforms per draw)
///  index(n): floor(uniform * n)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::size_t index(std::size_t n) {
        auto k = static_cast<std::size_t>(uniform() * static_cast<double>(n));
        return k < n ? k : n - 1;
    }

    template <typename T>
    void shuffle(std::span<T> xs) {
        for (std::size_t i = xs.size(); i > 1; --i) {
            std::swap(xs[i - 1], xs[index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

inline constexpr const char* kRngScheme =
    "mt19937_64 seeded by splitmix64(seed, realization, stream); uniform=(bits>>11)*2^-53; "
    "normal=Box-Muller cosine branch; index=floor(uniform*n)";

}  // namespace dsw
