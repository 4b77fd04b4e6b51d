#pragma once

#include <cstdint>
#include <random>

namespace farm {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed for stream `stream` under master seed `seed`. Streams are keyed by
/// counter, so a replication or bootstrap draw gets the same numbers no
/// matter which thread runs it or in what order.
constexpr std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t salt = 0) noexcept {
    return mix64(mix64(seed ^ mix64(salt)) + stream);
}

inline Rng make_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t salt = 0) {
    return Rng(stream_seed(seed, stream, salt));
}

}  // namespace farm
