#ifndef STIM_RNG_HPP
#define STIM_RNG_HPP

#include <cstdint>
#include <random>

namespace stim {

// splitmix64, used to derive independent seeds for per-episode streams.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

// Derives the i-th child seed of a base seed. Streams derived from distinct
// indices are independent for practical purposes.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    std::uint64_t s = base + 0x9e3779b97f4a7c15ULL * (index + 1);
    return splitmix64(s);
}

inline double uniform_real(Rng& rng, double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>{lo, hi}(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
    return std::uniform_int_distribution<int>{lo, hi}(rng);
}

}  // namespace stim

#endif  // STIM_RNG_HPP
