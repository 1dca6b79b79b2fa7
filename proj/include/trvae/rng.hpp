#pragma once

#include <cstdint>

namespace trvae {

/// Counter-based SplitMix64 stream.
///
/// Output k (k = 1, 2, ...) is `mix(seed + k * 0x9E3779B97F4A7C15)` where `mix` is the
/// SplitMix64 finalizer. Uniform doubles take the top 53 bits; normals use the basic
/// Box-Muller transform consuming two uniforms per draw (the sine branch is discarded).
/// Every language with 64-bit unsigned arithmetic can reproduce the stream exactly.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal();

    /// Uniform integer in [0, bound) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t bound);

    /// Derive an independent child stream; used to give subsystems their own sequence.
    SplitMix64 fork() { return SplitMix64(next_u64()); }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
};

}  // namespace trvae
