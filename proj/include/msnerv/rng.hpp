#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "msnerv/tensor.hpp"

namespace msnerv {

// Deterministic RNG wrapper. std::mt19937_64 has a standard-mandated
// sequence, but the standard distributions do not, so values are derived
// from raw bits here to keep runs reproducible across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // in [0, 1)
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // in [0, n)
    int64_t uniform_int(int64_t n) {
        // modulo bias is negligible for n << 2^64 and irrelevant here
        return static_cast<int64_t>(eng_() % static_cast<uint64_t>(n));
    }

    double normal() {
        // Box-Muller; one value per call keeps the stream simple
        double u1 = 0.0;
        while (u1 == 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[static_cast<size_t>(uniform_int(static_cast<int64_t>(i)))]);
    }

    Tensor uniform_tensor(std::vector<int64_t> shape, double lo, double hi) {
        Tensor t(std::move(shape));
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

private:
    std::mt19937_64 eng_;
};

// SplitMix64 step; used to derive independent substream seeds.
inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

}  // namespace msnerv
