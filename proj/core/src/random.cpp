#include "citrinet/random.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "citrinet/error.hpp"

namespace citrinet {

double standard_normal(Rng &rng) {
    // Box-Muller; u1 is shifted away from zero so the log is finite.
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string rng_state(const Rng &rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void set_rng_state(Rng &rng, const std::string &state) {
    std::istringstream is(state);
    is >> rng;
    if (!is)
        throw InputError("malformed RNG state");
}

} // namespace citrinet
