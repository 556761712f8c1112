#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace beetlescan {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Derives an independent substream seed from a base seed and a path of
/// integer coordinates, e.g. (seed, epoch, sample).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept
{
    std::uint64_t h = mix64(seed);
    for (auto p : path)
        h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
    return h;
}

inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> path = {})
{
    return Rng(derive_seed(seed, path));
}

/// Uniform draw in [lo, hi]; returns lo exactly when lo == hi.
inline double uniform(Rng& rng, double lo, double hi)
{
    return lo + (hi - lo) * std::generate_canonical<double, 53>(rng);
}

inline double standard_normal(Rng& rng)
{
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

} // namespace beetlescan
