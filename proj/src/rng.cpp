#include "volformer/rng.hpp"

#include "volformer/error.hpp"

#include <cmath>

namespace volformer {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
}

inline std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

SeededRng::SeededRng(std::uint64_t seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
}

std::uint64_t SeededRng::next_u64() {
    std::uint64_t* s = state_;
    const std::uint64_t result = rotl(s[1] * 5, 7) * 9;
    const std::uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return result;
}

std::uint64_t SeededRng::next_below(std::uint64_t bound) {
    if (bound == 0) fail(ErrorKind::value, "next_below: bound must be positive");
    const std::uint64_t limit = ~std::uint64_t{0} - ~std::uint64_t{0} % bound;
    std::uint64_t r = next_u64();
    while (r >= limit) r = next_u64();
    return r % bound;
}

double SeededRng::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SeededRng::next_normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    // u1 in (0,1] so the log is finite.
    const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_normal_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

double SeededRng::next_trunc_normal(double std_dev) {
    double z = next_normal();
    while (std::fabs(z) > 2.0) z = next_normal();
    return z * std_dev;
}

} // namespace volformer
