#pragma once

#include <cstdint>
#include <random>

namespace balk {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent generator seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

enum class StreamId : std::uint64_t { Arrivals = 1, Services = 2, Patience = 3, Probe = 4, Misc = 5 };

/// Generator for one named stream of a master seed. Distinct (seed, stream)
/// pairs give statistically independent sequences.
inline Rng make_stream(std::uint64_t master_seed, StreamId stream) {
    const auto id = static_cast<std::uint64_t>(stream);
    std::seed_seq seq{splitmix64(master_seed ^ splitmix64(id)), splitmix64(master_seed + 0x632be59bd9b4e019ULL * id),
                      id};
    return Rng(seq);
}

inline double uniform01(Rng& rng) {
    // (0,1): never returns exactly 0, safe for log().
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace balk
