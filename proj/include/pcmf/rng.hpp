#pragma once

#include <cstdint>
#include <random>

namespace pcmf {

// splitmix64 finalizer; used to derive independent seed streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

// Deterministic sub-seed for a named stream. Restart i draws from
// derive_seed(seed, tag, i); adding restarts never perturbs earlier ones.
enum class SeedStream : std::uint64_t {
    restart = 1,
    reestimate = 2,
    simulate_factors = 3,
    simulate_counts = 4,
    kmeans = 5,
    baseline = 6,
};

inline std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream, std::uint64_t index = 0) {
    return splitmix64(splitmix64(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(stream))) + index);
}

using Rng = std::mt19937_64;

// Beta(a, b) via two Gamma draws (the standard library has no beta distribution).
inline double draw_beta(Rng& rng, double a, double b) {
    std::gamma_distribution<double> ga(a, 1.0), gb(b, 1.0);
    const double x = ga(rng);
    const double y = gb(rng);
    return x / (x + y);
}

}  // namespace pcmf
