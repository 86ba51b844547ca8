#pragma once

#include <cmath>
#include <cstdint>

namespace epmc {

// Counter-based random numbers: every variate is a pure function of
// (seed, stream, index0, index1), so path-parallel generation matches
// serial generation bitwise and any draw can be regenerated on demand.

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t hash4(std::uint64_t seed, std::uint64_t stream,
                           std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc909ULL);
    h = mix64(h ^ stream);
    h = mix64(h ^ a);
    h = mix64(h ^ b);
    return h;
}

// uint64 -> (0,1); keeps away from 0 so log() is safe
inline double to_unit(std::uint64_t x) {
    return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace detail

/// Streams keep independent uses of the same seed from colliding.
enum class RngStream : std::uint64_t {
    initial_state = 1,
    increments = 2,
    validation = 3,
    oracle = 4,
    fuzz = 5,
};

inline double uniform_at(std::uint64_t seed, RngStream stream,
                         std::uint64_t a, std::uint64_t b) {
    return detail::to_unit(detail::hash4(seed, static_cast<std::uint64_t>(stream), a, b));
}

/// Standard normal via Box-Muller on two counter-derived uniforms.
inline double normal_at(std::uint64_t seed, RngStream stream,
                        std::uint64_t a, std::uint64_t b) {
    const std::uint64_t s = static_cast<std::uint64_t>(stream);
    const double u1 = detail::to_unit(detail::hash4(seed, s, a, 2 * b));
    const double u2 = detail::to_unit(detail::hash4(seed, s, a, 2 * b + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

/// Poisson(mean) by inversion for small means, split into chunks otherwise.
inline long poisson_at(std::uint64_t seed, RngStream stream,
                       std::uint64_t a, double mean) {
    long total = 0;
    std::uint64_t part = 0;
    while (mean > 30.0) {
        total += poisson_at(detail::hash4(seed, static_cast<std::uint64_t>(stream), a, 1'000'000 + part), stream, a, 30.0);
        mean -= 30.0;
        ++part;
    }
    const double u = uniform_at(seed, stream, a, 500'000 + part);
    double p = std::exp(-mean), cdf = p;
    long k = 0;
    while (u > cdf && k < 10'000) {
        ++k;
        p *= mean / static_cast<double>(k);
        cdf += p;
    }
    return total + k;
}

}  // namespace epmc
