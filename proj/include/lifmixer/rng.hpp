#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>

namespace lifmixer {

// SplitMix64 finalizer; the core bit mixer behind every random draw.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t hash_str(const char* s) {
    // FNV-1a, folded through mix64.
    uint64_t h = 0xcbf29ce484222325ull;
    for (; *s; ++s) {
        h ^= static_cast<unsigned char>(*s);
        h *= 0x100000001b3ull;
    }
    return mix64(h);
}

// Counter-based splittable random stream. fork() derives an independent
// substream from a tag; draws only advance the local counter, so streams
// derived from the same (seed, tags) are reproducible regardless of what
// other streams did. No global state anywhere.
class Rng {
public:
    Rng() : Rng(0) {}
    explicit Rng(uint64_t seed) : key_(mix64(seed ^ 0x5851f42d4c957f2dull)), counter_(0) {}

    Rng fork(uint64_t stream) const {
        Rng r;
        r.key_ = mix64(key_ ^ mix64(stream ^ 0xd6e8feb86659fd93ull));
        r.counter_ = 0;
        return r;
    }
    Rng fork(const char* tag) const { return fork(hash_str(tag)); }

    uint64_t next_u64() { return mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

    // Stateless draw at a fixed position; does not advance the counter.
    // Lets parallel per-element generators stay order-independent.
    uint64_t u64_at(uint64_t index) const {
        return mix64(key_ + (index + 1) * 0x9e3779b97f4a7c15ull);
    }
    double uniform_at(uint64_t index) const { return to_unit(u64_at(index)); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return to_unit(next_u64()); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Normal(0, sigma) rejected outside +-2 sigma.
    double trunc_normal(double sigma) {
        double z = normal();
        while (z < -2.0 || z > 2.0) z = normal();
        return z * sigma;
    }

    // Unbiased-enough integer in [0, n) via 128-bit multiply.
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
    }

private:
    static double to_unit(uint64_t bits) {
        return static_cast<double>(bits >> 11) * 0x1.0p-53;
    }

    uint64_t key_;
    uint64_t counter_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace lifmixer
