#pragma once

#include <array>
#include <cstdint>

namespace trips {

// xoshiro256** seeded through splitmix64.
//
//   splitmix64:  z += 0x9E3779B97F4A7C15
//                z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//                z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//                return z ^ (z >> 31)
//   xoshiro256**: result = rotl(s1 * 5, 7) * 9, then the standard
//                 shift/xor/rotl(s3, 45) state update.
//
// Uniforms take the top 53 bits scaled by 2^-53. Normals use the Box-Muller
// cosine branch on (1 - u1, u2) so log never sees zero. Only integer
// arithmetic and correctly rounded IEEE operations plus log/cos/sqrt are
// involved, so a seed yields the same stream on every conforming platform.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;
    // Uniform on [0, 1).
    double uniform() noexcept;
    // Uniform on [lo, hi).
    double uniform(double lo, double hi) noexcept;
    // Uniform integer on [lo, hi] (inclusive); small modulo bias is irrelevant here.
    std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) noexcept;
    // Standard normal.
    double normal() noexcept;

private:
    std::uint64_t seed_;
    std::array<std::uint64_t, 4> state_{};
};

}  // namespace trips
