#include "aub/rng.hpp"

#include <cmath>

#include "aub/common.hpp"

namespace aub {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}
}  // namespace

double SeededRng::normal() {
    // u1 in (0, 1] so the log is finite.
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

std::size_t SeededRng::index(std::size_t n) {
    require(n > 0, "SeededRng::index requires n > 0");
    const std::uint64_t un = n;
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % un);  // largest multiple of n
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return static_cast<std::size_t>(x % un);
}

SeededRng SeededRng::derive(std::uint64_t tag) const {
    return SeededRng(splitmix64(seed_ ^ splitmix64(tag)));
}

}  // namespace aub
