#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace copa {

using u128 = unsigned __int128;

// Element of Z_{2^128}. Native unsigned __int128 arithmetic already wraps.
struct RingElement {
  u128 value = 0;

  constexpr RingElement() = default;
  constexpr explicit RingElement(u128 v) : value(v) {}

  static constexpr RingElement from_words(std::uint64_t hi, std::uint64_t lo) {
    return RingElement((u128(hi) << 64) | lo);
  }

  constexpr std::uint64_t lo() const { return static_cast<std::uint64_t>(value); }
  constexpr std::uint64_t hi() const { return static_cast<std::uint64_t>(value >> 64); }

  friend constexpr RingElement operator+(RingElement a, RingElement b) { return RingElement(a.value + b.value); }
  friend constexpr RingElement operator-(RingElement a, RingElement b) { return RingElement(a.value - b.value); }
  friend constexpr RingElement operator*(RingElement a, RingElement b) { return RingElement(a.value * b.value); }
  constexpr RingElement operator-() const { return RingElement(-value); }

  constexpr RingElement& operator+=(RingElement o) { value += o.value; return *this; }
  constexpr RingElement& operator-=(RingElement o) { value -= o.value; return *this; }
  constexpr RingElement& operator*=(RingElement o) { value *= o.value; return *this; }

  friend constexpr bool operator==(RingElement a, RingElement b) { return a.value == b.value; }
};

constexpr RingElement ring_add(RingElement a, RingElement b) { return a + b; }
constexpr RingElement ring_sub(RingElement a, RingElement b) { return a - b; }
constexpr RingElement ring_mul(RingElement a, RingElement b) { return a * b; }

inline constexpr std::size_t kRingBytes = 16;

// Canonical 16-byte little-endian encoding.
inline void store_le(RingElement e, std::span<std::uint8_t> out) {
  if (out.size() < kRingBytes) throw std::out_of_range("store_le: buffer shorter than 16 bytes");
  u128 v = e.value;
  for (std::size_t i = 0; i < kRingBytes; ++i) {
    out[i] = static_cast<std::uint8_t>(v);
    v >>= 8;
  }
}

inline RingElement load_le(std::span<const std::uint8_t> in) {
  if (in.size() < kRingBytes) throw std::out_of_range("load_le: buffer shorter than 16 bytes");
  u128 v = 0;
  for (std::size_t i = kRingBytes; i-- > 0;) v = (v << 8) | in[i];
  return RingElement(v);
}

inline std::array<std::uint8_t, kRingBytes> to_bytes(RingElement e) {
  std::array<std::uint8_t, kRingBytes> b{};
  store_le(e, b);
  return b;
}

inline std::string to_decimal(RingElement e) {
  if (e.value == 0) return "0";
  std::string s;
  u128 v = e.value;
  while (v != 0) {
    s.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  return {s.rbegin(), s.rend()};
}

inline std::string to_hex(RingElement e) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(32, '0');
  u128 v = e.value;
  for (std::size_t i = 32; i-- > 0;) {
    s[i] = digits[static_cast<unsigned>(v & 0xF)];
    v >>= 4;
  }
  return s;
}

// Accepts decimal or 0x-prefixed hex; values are reduced mod 2^128.
inline RingElement parse_ring(std::string_view text) {
  if (text.empty()) throw std::invalid_argument("parse_ring: empty string");
  u128 v = 0;
  if (text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')) {
    for (char c : text.substr(2)) {
      unsigned d;
      if (c >= '0' && c <= '9') d = c - '0';
      else if (c >= 'a' && c <= 'f') d = 10 + c - 'a';
      else if (c >= 'A' && c <= 'F') d = 10 + c - 'A';
      else throw std::invalid_argument("parse_ring: bad hex digit in '" + std::string(text) + "'");
      v = (v << 4) | d;
    }
  } else {
    for (char c : text) {
      if (c < '0' || c > '9') throw std::invalid_argument("parse_ring: bad decimal digit in '" + std::string(text) + "'");
      v = v * 10 + static_cast<unsigned>(c - '0');
    }
  }
  return RingElement(v);
}

}  // namespace copa
