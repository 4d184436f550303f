#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace malbench {

/// SplitMix64 finalizer. Scrambles a raw seed into a well-mixed 64-bit value.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ull));
}

/// Derives an independent seed stream from a base seed, a stream name and up to
/// two indices. Every component that needs randomness pulls its own named
/// stream so that adding or removing one consumer never shifts another.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream,
                          std::uint64_t a = 0, std::uint64_t b = 0);

inline std::mt19937_64 make_rng(std::uint64_t seed) {
    return std::mt19937_64(splitmix64(seed));
}

}  // namespace malbench
