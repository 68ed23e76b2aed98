#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>

namespace netsketch {

// The standard distributions are implementation-defined, so seeded runs
// would differ across toolchains. These draw from mt19937_64 (which the
// standard pins bit-exactly) through fully specified arithmetic.

/// Uniform double in the open interval (0, 1).
inline double uniform_unit(std::mt19937_64& gen) {
    return (double(gen() >> 11) + 0.5) * 0x1p-53;
}

/// Uniform integer in [0, n) by rejection sampling.
inline std::uint64_t uniform_below(std::mt19937_64& gen, std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("uniform_below needs n >= 1");
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
    std::uint64_t x = gen();
    while (x >= limit) x = gen();
    return x % n;
}

/// Standard normal draw via the Box-Muller transform (two uniforms per
/// value; no state beyond the generator).
inline double gaussian(std::mt19937_64& gen) {
    const double u1 = uniform_unit(gen);
    const double u2 = uniform_unit(gen);
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace netsketch
