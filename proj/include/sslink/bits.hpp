#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sslink/error.hpp"

namespace sslink {

/// A received or transmitted binary decision; `erasure` marks a decision the
/// receiver refused to make.
enum class Bit : std::uint8_t { zero = 0, one = 1, erasure = 2 };

using Bits = std::vector<Bit>;

inline Bit to_bit(bool b) { return b ? Bit::one : Bit::zero; }
inline bool is_erasure(Bit b) { return b == Bit::erasure; }

/// "1011" -> {one, zero, one, one}; 'x' or 'E' is an erasure, spaces are ignored.
inline Bits bits_from_string(std::string_view s) {
  Bits out;
  for (char c : s) {
    if (c == ' ' || c == '\t') continue;
    if (c == '0') out.push_back(Bit::zero);
    else if (c == '1') out.push_back(Bit::one);
    else if (c == 'x' || c == 'E') out.push_back(Bit::erasure);
    else throw Error(Errc::invalid_argument, std::string("bad bit character '") + c + "'");
  }
  return out;
}

inline std::string to_string(std::span<const Bit> bits) {
  std::string s;
  s.reserve(bits.size());
  for (Bit b : bits) s += b == Bit::one ? '1' : b == Bit::zero ? '0' : 'x';
  return s;
}

/// MSB-first unsigned field.
inline void append_field(Bits& out, std::uint32_t value, int width) {
  for (int i = width - 1; i >= 0; --i) out.push_back(to_bit((value >> i) & 1U));
}

inline std::uint32_t read_field(std::span<const Bit> bits, std::size_t offset, int width) {
  std::uint32_t v = 0;
  for (int i = 0; i < width; ++i) {
    const Bit b = bits[offset + static_cast<std::size_t>(i)];
    if (b == Bit::erasure) throw Error(Errc::erasure_present, "erasure at bit " + std::to_string(offset + i));
    v = v << 1 | (b == Bit::one ? 1U : 0U);
  }
  return v;
}

}  // namespace sslink
