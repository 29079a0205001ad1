#pragma once

#include <cmath>
#include <cstdint>
#include <span>

#include "iqgen/errors.hpp"

// Deterministic random number generation. Every stochastic component in the
// pipeline draws from Rng (xoshiro256**) seeded via splitmix64, and all
// transformations from raw bits to doubles are spelled out here, so results
// are bit-identical across platforms and standard-library versions.

namespace iqgen {

inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Mixes two seeds into one; used to derive per-user / per-stage streams.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
    uint64_t s = a;
    uint64_t h = splitmix64(s);
    s = h ^ b;
    return splitmix64(s);
}

class Rng {
  public:
    explicit Rng(uint64_t seed = 0) { reseed(seed); }

    void reseed(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
        have_gauss_ = false;
        gauss_ = 0.0;
    }

    // xoshiro256** by Blackman & Vigna.
    uint64_t next() {
        const uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Unbiased via rejection sampling.
    uint64_t below(uint64_t n) {
        if (n == 0) throw InputError("rng: below(0)");
        const uint64_t threshold = (0 - n) % n;  // 2^64 mod n
        for (;;) {
            uint64_t r = next();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller (cached second value).
    double normal() {
        if (have_gauss_) {
            have_gauss_ = false;
            return gauss_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();  // avoid log(0)
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        gauss_ = radius * std::sin(angle);
        have_gauss_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Index draw from unnormalized non-negative weights.
    size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0 || !std::isfinite(w)) throw InputError("rng: bad categorical weight");
            total += w;
        }
        if (total <= 0.0) throw InputError("rng: categorical weights sum to zero");
        double u = uniform() * total;
        for (size_t i = 0; i + 1 < weights.size(); ++i) {
            u -= weights[i];
            if (u < 0.0) return i;
        }
        return weights.size() - 1;
    }

    // In-place Fisher-Yates shuffle.
    template <class T>
    void shuffle(std::span<T> items) {
        for (size_t i = items.size(); i > 1; --i) {
            size_t j = below(i);
            std::swap(items[i - 1], items[j]);
        }
    }

  private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    uint64_t s_[4] = {};
    bool have_gauss_ = false;
    double gauss_ = 0.0;
};

}  // namespace iqgen
