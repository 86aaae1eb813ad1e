#include "archtune/archspace/bigcount.hpp"

#include <algorithm>
#include <stdexcept>

namespace archtune::arch {

BigCount::BigCount(std::uint64_t v) : limbs_{static_cast<std::uint32_t>(v), static_cast<std::uint32_t>(v >> 32)} {
    trim();
}

void BigCount::trim() {
    while (limbs_.size() > 1 && limbs_.back() == 0) limbs_.pop_back();
}

BigCount& BigCount::operator*=(std::uint32_t m) {
    std::uint64_t carry = 0;
    for (auto& limb : limbs_) {
        const std::uint64_t v = static_cast<std::uint64_t>(limb) * m + carry;
        limb = static_cast<std::uint32_t>(v);
        carry = v >> 32;
    }
    if (carry) limbs_.push_back(static_cast<std::uint32_t>(carry));
    trim();
    return *this;
}

std::string BigCount::to_string() const {
    std::vector<std::uint32_t> n = limbs_;
    std::string digits;
    auto is_zero = [&] { return std::all_of(n.begin(), n.end(), [](std::uint32_t l) { return l == 0; }); };
    if (is_zero()) return "0";
    while (!is_zero()) {
        std::uint64_t rem = 0;
        for (std::size_t i = n.size(); i-- > 0;) {
            const std::uint64_t cur = (rem << 32) | n[i];
            n[i] = static_cast<std::uint32_t>(cur / 10);
            rem = cur % 10;
        }
        digits.push_back(static_cast<char>('0' + rem));
    }
    std::reverse(digits.begin(), digits.end());
    return digits;
}

bool BigCount::fits_u64() const noexcept { return limbs_.size() <= 2; }

std::uint64_t BigCount::to_u64() const {
    if (!fits_u64()) throw std::overflow_error("BigCount exceeds 64 bits");
    std::uint64_t v = limbs_[0];
    if (limbs_.size() > 1) v |= static_cast<std::uint64_t>(limbs_[1]) << 32;
    return v;
}

int BigCount::exact_log2() const {
    int bit = -1;
    for (std::size_t i = 0; i < limbs_.size(); ++i) {
        const std::uint32_t l = limbs_[i];
        if (l == 0) continue;
        if ((l & (l - 1)) != 0 || bit >= 0) return -1;
        int b = 0;
        while ((1u << b) != l) ++b;
        bit = static_cast<int>(i) * 32 + b;
    }
    return bit;
}

}  // namespace archtune::arch
