#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace mseg {

// Deterministic PRNG with an explicit 64-bit seed. State expansion uses
// splitmix64, the stream is xoshiro256**, normals come from the Marsaglia
// polar method. All algorithms are fixed here (not delegated to the standard
// library, whose distributions are implementation-defined), so identical
// seeds give identical streams on every platform.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();

    // Uniform in [0,1) with 53 random mantissa bits.
    double uniform();
    double uniform(double lo, double hi);

    // Unbiased integer in [lo, hi] inclusive (rejection sampling).
    int64_t uniform_int(int64_t lo, int64_t hi);

    // Standard normal, Marsaglia polar method (pairs cached).
    double normal();

    // Fisher-Yates in-place shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::array<uint64_t, 4> state_{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mseg
