#pragma once

// Seed fan-out. Every random stream in the project is derived from a master
// seed through these mixers so that components reproduce independently.

#include <cstdint>
#include <random>
#include <string_view>

namespace cbmaudit {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view text) noexcept
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// seed_i = stable_hash(master, i)
constexpr std::uint64_t stable_hash(std::uint64_t seed, std::uint64_t index) noexcept
{
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t stable_hash(std::uint64_t seed, std::string_view label) noexcept
{
    return stable_hash(seed, fnv1a(label));
}

constexpr std::uint64_t stable_hash(std::uint64_t seed, std::string_view label, std::uint64_t index) noexcept
{
    return stable_hash(stable_hash(seed, label), index);
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline double uniform(Rng& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace cbmaudit
