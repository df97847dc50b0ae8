// Platform-independent seeded randomness. std::mt19937_64's output sequence
// is fixed by the standard; the distributions in <random> are not, so the
// few we need are spelled out here.
#pragma once

#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

namespace gar {

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Generator for stream `counter` of a base seed (e.g. one per epoch).
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t counter)
{
    return std::mt19937_64(splitmix64(seed ^ counter));
}

/// Uniform double in [0, 1) from the top 53 bits of a draw.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Unbiased integer in [0, n) by rejection.
inline std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t n)
{
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t r = rng();
    while (r >= limit)
        r = rng();
    return r % n;
}

/// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(std::size_t n, std::mt19937_64& rng)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(bounded(rng, i));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

} // namespace gar
