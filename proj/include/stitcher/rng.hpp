#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace stitcher {

// Deterministic RNG wrapper. std::mt19937_64 has a fully specified output
// sequence, but the standard distributions do not, so every derived draw
// (uniform, gaussian, shuffle) is implemented here explicitly. All
// randomness in the project flows through this class from a user seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform double in [0, 1), 53 bits of entropy.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform index in [0, n). n must be > 0.
    size_t bounded(size_t n) { return static_cast<size_t>(next_u64() % n); }

    // Standard normal via Box-Muller.
    double gaussian() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Fisher-Yates, high index down.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = bounded(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent stream derived from a base seed and a stream id.
    static Rng fork(uint64_t seed, uint64_t stream) {
        return Rng(splitmix64(seed + 0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

    static uint64_t splitmix64(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace stitcher
