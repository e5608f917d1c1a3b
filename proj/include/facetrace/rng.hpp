#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace facetrace {

// Deterministic RNG used everywhere randomness is needed. std:: distributions
// are not guaranteed bit-stable across standard library versions, so both the
// generator and the uniform/normal transforms are fixed here.
//
// Streams are derived, not advanced: derive_stream(seed, label, a, b) always
// yields the same sequence no matter what other streams were consumed before.
// This is what makes interrupted/resumed runs replay identically; consumers
// key their stream on (seed, purpose, epoch/index) instead of sharing state.

class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

private:
    uint64_t state_;
};

inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t hash_label(uint64_t h, std::string_view label) {
    for (unsigned char c : label)
        h = mix64(h ^ c);
    return h;
}

class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_.next(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return double(gen_.next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without caching the second value, so each draw consumes a
    // fixed amount of generator state.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        // u1 == 0 would take log(0); nudge to the smallest representable draw.
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Unbiased integer in [0, n) via rejection.
    uint64_t below(uint64_t n) {
        uint64_t limit = ~uint64_t(0) - ~uint64_t(0) % n;
        uint64_t v;
        do { v = gen_.next(); } while (v >= limit);
        return v % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[below(i)]);
    }

private:
    SplitMix64 gen_;
};

inline RandomStream derive_stream(uint64_t seed, std::string_view label,
                                  uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = mix64(seed ^ 0x6a09e667f3bcc908ull);
    h = hash_label(h, label);
    h = mix64(h ^ a);
    h = mix64(h ^ b);
    return RandomStream(h);
}

} // namespace facetrace
