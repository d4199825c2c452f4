#pragma once

#include <cstdint>
#include <initializer_list>
#include <cmath>
#include <random>

namespace simcvd {

/// splitmix64 finalizer; used to derive independent counter-based seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `parts...` under a root seed. Order-sensitive.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> parts) {
    std::uint64_t s = mix64(root);
    for (auto p : parts) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
    return s;
}

using Rng = std::mt19937_64;

/// Uniform double in [0,1) from the top 53 bits; stable across standard libraries.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Integer in [lo, hi] inclusive.
inline int uniform_int(Rng& rng, int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(rng() % span);
}

/// Standard normal via Box-Muller; library-independent so seeds replay everywhere.
inline double standard_normal(Rng& rng) {
    double u1 = uniform01(rng);
    while (u1 <= 0.0) u1 = uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925 * u2);
}

}  // namespace simcvd
