#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cfmn {

#ifdef CFMN_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

// Error taxonomy. Shape/config/protocol errors are caller mistakes;
// NumericError means a non-finite value escaped an op.
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline uint64_t mix_u64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline uint64_t mix_u64(uint64_t a, uint64_t b) {
    return mix_u64(a ^ (mix_u64(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

// Deterministic RNG with hand-rolled sampling so that sequences are stable
// across platforms and standard-library versions. splitmix64 core.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed0_(seed), state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds, rejection-free enough for our ranges
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return lo + static_cast<int>(v % span);
    }

    // Box-Muller; draws two uniforms per call, no cached state
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Independent stream keyed off the *original* seed, so derivation does
    // not depend on how many draws this stream has made.
    Rng substream(uint64_t key) const { return Rng(mix_u64(seed0_, key)); }

    uint64_t seed() const { return seed0_; }

private:
    uint64_t seed0_;
    uint64_t state_;
};

}  // namespace cfmn
