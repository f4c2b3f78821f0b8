#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

namespace crynet {

// Deterministic RNG for all initialization and shuffling.
// Generator: std::mt19937_64. Uniform doubles are built from the high 53
// bits of the raw output instead of std::uniform_real_distribution, whose
// results are implementation-defined; this keeps streams bit-reproducible
// across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n). Modulo reduction; the bias at n << 2^64 is immaterial here.
    int below(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        std::iota(p.begin(), p.end(), 0);
        for (int i = n - 1; i > 0; --i) {
            int j = below(i + 1);
            std::swap(p[i], p[j]);
        }
        return p;
    }

    // Derive an independent stream, for per-purpose seeding.
    Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

private:
    std::mt19937_64 gen_;
};

}  // namespace crynet
