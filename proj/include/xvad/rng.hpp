// rng.hpp - Deterministic random streams.
//
// Engine is std::mt19937_64 (its output sequence is pinned by the standard).
// The uniform mappings are implemented here instead of <random> distributions
// because distribution output is implementation-defined and would break the
// cross-build determinism contract.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace xvad {

// splitmix64 finalizer; good enough to decorrelate derived seeds.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derive an independent stream id from (seed, index) pairs, e.g. per-video
// generator seeds or per-episode sampling seeds. Order-insensitive use:
// derive_seed(s, i) depends only on s and i, never on call order.
inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
    return mix64(seed ^ mix64(index + 0x517cc1b727220a95ull));
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) {
    return derive_seed(derive_seed(seed, a), b);
}

class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform integer in [0, n), n >= 1. Unbiased via rejection.
    uint64_t uniform_u64(uint64_t n) {
        const uint64_t limit = n * (UINT64_MAX / n);
        uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return x % n;
    }

    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(uniform_u64(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Uniform double in [0, 1) with 53 bits of precision.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (both values consumed for determinism).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(uniform_u64(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace xvad
