#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace textseg {

// Deterministic RNG used everywhere seeds matter. Draws are hand-rolled from
// the raw mt19937_64 stream so results do not depend on the standard
// library's distribution implementations.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [lo, hi)
    double uniform(double lo = 0.0, double hi = 1.0) {
        double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return lo + u * (hi - lo);
    }

    // inclusive on both ends
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; caches the second variate.
    double normal(double mean = 0.0, double sd = 1.0) {
        if (has_cached_) {
            has_cached_ = false;
            return mean + sd * cached_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.141592653589793238462643383279502884 * u2;
        cached_ = r * std::sin(a);
        has_cached_ = true;
        return mean + sd * r * std::cos(a);
    }

private:
    std::mt19937_64 gen_;
    double cached_ = 0.0;
    bool has_cached_ = false;
};

// FNV-1a over a string tag, mixed with a base seed. Keeps independent
// substreams (init, data, augmentation, ...) from one run seed.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t base, std::string_view tag) {
    uint64_t h = fnv1a(tag);
    h ^= base + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    // splitmix64 finalizer
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ull;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebull;
    h ^= h >> 31;
    return h;
}

inline uint64_t derive_seed(uint64_t base, std::string_view tag, uint64_t index) {
    return derive_seed(derive_seed(base, tag), std::to_string(index));
}

}  // namespace textseg
