#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>

namespace fmrcc {

// splitmix64 step; used both as a stream generator primer and as a seed mixer.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Deterministically combines a seed with a key into a new seed.
/// Chaining mix() calls derives independent child streams from one master seed.
inline std::uint64_t mix(std::uint64_t seed, std::uint64_t key) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL + key);
    std::uint64_t a = splitmix64(s);
    s ^= key * 0xff51afd7ed558ccdULL;
    return a ^ splitmix64(s);
}

/// Hash of a double through its bit pattern, for seed derivation from real-valued
/// configuration knobs. Identical values give identical hashes on any platform.
inline std::uint64_t key_of(double v) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(v));
    std::memcpy(&bits, &v, sizeof(bits));
    return bits;
}

/// Deterministic random stream. The engine is std::mt19937_64 (bit-exact across
/// conforming implementations); uniform and normal conversion are done explicitly
/// because the std distributions are implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        // expand the seed so nearby seeds do not produce correlated engines
        std::uint64_t s = seed;
        engine_.seed(splitmix64(s));
    }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1].
    double uniform_pos() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    /// Standard normal via Box-Muller; two uniforms per draw, no cached state.
    double normal() {
        double u1 = uniform_pos();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // multiply-shift rejection-free mapping is fine here: bias is O(n/2^64)
        return static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace fmrcc
