#pragma once

#include <cstdint>
#include <random>

namespace cccfid {

// Named substream ids so independent parts of the pipeline never share a
// generator. Draw-level streams are derived per index, which keeps results
// invariant to worker count and scheduling.
enum class RngStream : std::uint64_t {
    dataset = 1,
    fiducial_draw = 2,
    bootstrap = 3,
    monte_carlo = 4,
    replication = 5,
    parameter_search = 6,
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
} // namespace detail

// Engine for (seed, stream, index); identical arguments give identical draws.
inline std::mt19937_64 substream(std::uint64_t seed, RngStream stream,
                                 std::uint64_t index = 0) {
    std::uint64_t h = detail::splitmix64(seed);
    h = detail::splitmix64(h ^ static_cast<std::uint64_t>(stream));
    h = detail::splitmix64(h ^ index);
    return std::mt19937_64(h);
}

} // namespace cccfid
