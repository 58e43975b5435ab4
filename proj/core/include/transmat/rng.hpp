#pragma once

#include <cstdint>
#include <random>

namespace transmat {

using Rng = std::mt19937_64;

constexpr uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent generator for sub-stream `stream` of `seed`.
inline Rng make_rng(uint64_t seed, uint64_t stream = 0) {
    return Rng(splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

}  // namespace transmat
