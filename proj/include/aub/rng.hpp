#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace aub {

/// Deterministic random stream. The raw generator is mt19937_64 (bit-exact by
/// the standard) and all derived draws (uniform, normal, index) are computed
/// here rather than through std distributions, so identical seeds give
/// identical streams on every platform and toolchain.
class SeededRng {
public:
    static constexpr std::string_view kAlgorithm = "mt19937_64/boxmuller";

    explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::string_view algorithm() const { return kAlgorithm; }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (two raw draws per call, no cached spare).
    double normal();

    /// Uniform index in [0, n), rejection-sampled to remove modulo bias.
    std::size_t index(std::size_t n);

    /// Independent stream derived from (seed, tag); does not consume state.
    SeededRng derive(std::uint64_t tag) const;

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace aub
