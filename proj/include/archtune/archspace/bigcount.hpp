#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace archtune::arch {

/// Unsigned integer of unbounded width, enough for search-space sizes.
class BigCount {
public:
    BigCount() : limbs_{0} {}
    explicit BigCount(std::uint64_t v);

    BigCount& operator*=(std::uint32_t m);
    std::string to_string() const;
    /// Exact value when it fits in 64 bits.
    bool fits_u64() const noexcept;
    std::uint64_t to_u64() const;
    /// Exponent e when the value equals 2^e exactly.
    int exact_log2() const;

    friend bool operator==(const BigCount&, const BigCount&) = default;

private:
    void trim();
    std::vector<std::uint32_t> limbs_;  // little-endian base 2^32
};

}  // namespace archtune::arch
