#pragma once

#include <cstdint>
#include <vector>

namespace volformer {

// Deterministic counter-style RNG: xoshiro256** seeded through splitmix64.
// The uint64 stream is identical for a given seed on every platform, which is
// what fold splits, weight init and the synthetic data generator rely on.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Unbiased integer in [0, bound) via rejection sampling. bound > 0.
    std::uint64_t next_below(std::uint64_t bound);

    // Uniform in [0, 1) with 53 random bits.
    double next_double();

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double next_normal();

    // Normal(0, std) resampled until |z| <= 2 std (ViT-style truncated init).
    double next_trunc_normal(double std_dev);

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::uint64_t state_[4];
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

} // namespace volformer
