#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sswl {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

/// Derives a stream seed from a root seed and a list of counters. Every random
/// draw in the library is keyed this way, so resuming at any counter reproduces
/// the original sequence.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> counters) noexcept {
    std::uint64_t h = mix64(root);
    for (auto c : counters) h = mix64(h ^ mix64(c + 0x632BE59BD9B4E019ull));
    return h;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> counters = {}) {
    return Rng(derive_seed(root, counters));
}

// Stream tags keep unrelated consumers of one root seed apart.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t eps = 3;
inline constexpr std::uint64_t split = 4;
inline constexpr std::uint64_t phantom = 5;
inline constexpr std::uint64_t nac = 6;
inline constexpr std::uint64_t extractor = 7;
}  // namespace stream

}  // namespace sswl
