#pragma once

#include <cstdint>
#include <string_view>

namespace archtune::nk {

/// xoshiro256** seeded through SplitMix64.
///
/// Streams are reproducible bit-for-bit on any platform: seeding expands the
/// 64-bit seed with SplitMix64 into the four state words, uniform doubles take
/// the top 53 bits, and normals use Box-Muller with no cached spare. A child
/// stream for a named consumer is derived with split(tag), which hashes the tag
/// (FNV-1a 64) into the parent's seed and re-seeds. The parent's own stream is
/// not advanced by split().
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() noexcept;
    /// Uniform in [0, 1).
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n). Uses rejection so the result is unbiased.
    std::uint64_t below(std::uint64_t n) noexcept;
    double normal() noexcept;

    Rng split(std::string_view tag) const;

    static std::uint64_t splitmix64(std::uint64_t& state) noexcept;
    static std::uint64_t hash_tag(std::string_view tag) noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
};

}  // namespace archtune::nk
