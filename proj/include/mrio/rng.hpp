#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace mrio {

// Deterministic counter-free PRNG (xoshiro256**). We avoid std distributions
// because their output is implementation-defined; every scene, cloud and
// weight init in this project must be reproducible bit-for-bit.
class Rng {
  public:
    explicit Rng(uint64_t seed) {
        // splitmix64 expansion of the seed into the state
        uint64_t x = seed;
        for (auto& si : s_) {
            x += 0x9e3779b97f4a7c15ull;
            uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
            si = z ^ (z >> 31);
        }
    }

    uint64_t next_u64() {
        uint64_t result = rotl(s_[1] * 5, 7) * 9;
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call (the pair's sine half is discarded so the
    // stream position does not depend on caller parity).
    double gauss() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    uint64_t below(uint64_t n) { return n ? next_u64() % n : 0; }

  private:
    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
    uint64_t s_[4];
};

// FNV-1a over a label, for deriving independent named substreams from one seed.
inline uint64_t substream(uint64_t seed, std::string_view label) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : label) {
        h ^= uint64_t(uint8_t(c));
        h *= 0x100000001b3ull;
    }
    return h ^ (seed * 0x9e3779b97f4a7c15ull);
}

}  // namespace mrio
