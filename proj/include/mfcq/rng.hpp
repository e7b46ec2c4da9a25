#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "mfcq/errors.hpp"

namespace mfcq {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

// Named sub-streams derived from one master seed, so components (exploration,
// rollouts, initial states, ...) can be re-run independently.
enum class Stream : std::uint64_t {
    Exploration = 1,
    NetCertification = 2,
    InitialStates = 3,
    Rollout = 4,
    CoveringTime = 5,
    GapInitialStates = 6,
    GapRollout = 7,
    Measurement = 8,
};

// Deterministically mixes (master, stream, index) into a 64-bit seed.
inline std::uint64_t substream_seed(std::uint64_t master, Stream stream, std::uint64_t index = 0) {
    std::uint64_t s = master;
    (void)detail::splitmix64(s);
    s ^= static_cast<std::uint64_t>(stream) * 0x9e3779b97f4a7c15ULL;
    (void)detail::splitmix64(s);
    s ^= index * 0xd1b54a32d192ed03ULL;
    return detail::splitmix64(s);
}

// Seeded generator with the few draw primitives the toolkit needs. All
// derived draws are built from raw 64-bit outputs, so a given seed yields
// the same sequence on every platform with the same standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t u64() { return gen_(); }

    // Uniform double in [0, 1), 53 random bits.
    double unit() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }

    // Uniform index in [0, n), rejection sampling (no modulo bias).
    std::size_t index(std::size_t n) {
        if (n == 0) throw ArgumentError("Rng::index: n must be positive");
        const std::uint64_t span = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t x = u64();
        while (x >= limit) x = u64();
        return static_cast<std::size_t>(x % span);
    }

    // Exponential(1); argument of log is in (0, 1] so the result is finite.
    double exponential() { return -std::log1p(-unit()); }

    // Dirichlet(1,...,1): uniform point of the simplex spanned by `out`.
    void dirichlet(std::span<double> out) {
        double total = 0.0;
        for (double& v : out) {
            v = exponential();
            total += v;
        }
        for (double& v : out) v /= total;
    }

private:
    std::mt19937_64 gen_;
};

}  // namespace mfcq
