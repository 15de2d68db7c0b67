#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace citrinet {

using Rng = std::mt19937_64;

// Uniform in [0, 1) from the top 53 bits; independent of the standard
// library's distribution implementations.
inline double uniform01(Rng &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Uniform integer in [lo, hi] (inclusive).
inline std::int64_t uniform_int(Rng &rng, std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(uniform01(rng) * static_cast<double>(span));
}

double standard_normal(Rng &rng);

// splitmix64 finalizer, used to derive independent child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

std::string rng_state(const Rng &rng);
void set_rng_state(Rng &rng, const std::string &state);

} // namespace citrinet
