#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string_view>

namespace biasscope {

// mt19937_64's output sequence is fixed by the standard; the helpers below
// avoid std distributions, whose algorithms are implementation-defined, so
// seeded runs are reproducible across standard libraries.
using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Seed for one (root, iteration, purpose) stream.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t iteration,
                                 std::string_view purpose) {
    return splitmix64(splitmix64(root ^ splitmix64(iteration)) ^ fnv1a64(purpose));
}

// Uniform double in [0, 1) from the top 53 bits.
inline double unit_double(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n) by rejection; n > 0.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

}  // namespace biasscope
