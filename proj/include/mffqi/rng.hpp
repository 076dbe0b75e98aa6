#pragma once

#include <cstdint>
#include <random>

namespace mffqi {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Seed for the `index`-th stream of a run. Streams are derived, not split from
/// a shared engine, so results do not depend on collection order or parallelism.
inline std::uint64_t derive_stream_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(splitmix64(seed) ^ splitmix64(index + 0x632BE59BD9B4E019ULL));
}

inline std::mt19937_64 make_stream_rng(std::uint64_t seed, std::uint64_t index) {
    return std::mt19937_64(derive_stream_seed(seed, index));
}

}  // namespace mffqi
