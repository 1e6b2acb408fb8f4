#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "nanofusion/common.hpp"

namespace nf {

// PCG32 with an explicit stream id. All randomness in the project flows
// through this generator so that outputs are reproducible bit-for-bit across
// runs and independent of the standard library in use.
class Rng {
public:
    Rng() : Rng(0, 0) {}
    Rng(uint64_t seed, uint64_t stream) {
        state_ = 0u;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += splitmix64(seed);
        next_u32();
    }

    uint32_t next_u32() {
        uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        uint32_t xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        uint32_t rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    uint64_t next_u64() {
        uint64_t hi = next_u32();
        return (hi << 32) | next_u32();
    }

    // Unbiased integer in [0, n).
    uint32_t bounded(uint32_t n) {
        uint32_t threshold = (-n) % n;
        for (;;) {
            uint32_t r = next_u32();
            if (r >= threshold) return r % n;
        }
    }

    // Uniform in [0, 1) with 24 bits of mantissa.
    float uniform() { return static_cast<float>(next_u32() >> 8) * 0x1.0p-24f; }
    double uniform_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float range(float lo, float hi) { return lo + (hi - lo) * uniform(); }
    double range_double(double lo, double hi) { return lo + (hi - lo) * uniform_double(); }

    bool bernoulli(double p) { return uniform_double() < p; }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform_double();
        } while (u1 <= 1e-300);
        u2 = uniform_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * kPi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }
    double normal(double mu, double sigma) { return mu + sigma * normal(); }

private:
    static uint64_t splitmix64(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    uint64_t state_ = 0;
    uint64_t inc_ = 1;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 14695981039346656037ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

// Named sub-stream of a master seed. Every component draws from its own
// stream so the pipeline stays reproducible end to end.
inline Rng derive_rng(uint64_t master_seed, std::string_view name, uint64_t index = 0) {
    return Rng(master_seed ^ (index * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL), fnv1a(name) ^ index);
}

}  // namespace nf
