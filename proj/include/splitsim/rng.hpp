#pragma once

// Seeded random draws used for synthetic noise and Monte-Carlo nulls. The
// mt19937_64 output sequence is pinned by the standard but the <random>
// distribution mappings are not, so the mappings are spelled out here to keep
// seeded results identical across standard libraries.

#include <cmath>
#include <cstdint>
#include <random>

#include "constants.hpp"

namespace splitsim {

// uniform in [0, 1) with 53-bit resolution
inline double uniform01(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

// standard normal deviate (Box-Muller, cosine branch)
inline double normal01(std::mt19937_64& gen) {
    double u = uniform01(gen);
    while (u == 0.0) u = uniform01(gen);
    const double v = uniform01(gen);
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * constants::pi * v);
}

// splitmix64 finalizer: one well-mixed word out of one word in.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Per-shot seed derived from the run seed and the shot index alone, so an
// ensemble draws the same noise regardless of evaluation order or thread
// count, and dropping one shot never shifts the others.
inline std::uint64_t shot_seed(std::uint64_t run_seed, std::uint64_t shot_index) {
    return mix_seed(mix_seed(run_seed) ^ (shot_index + 1));
}

} // namespace splitsim
