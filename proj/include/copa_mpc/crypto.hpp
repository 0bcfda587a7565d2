#pragma once

// ChaCha20 keystream and SHA-256, both backed by libsodium.

#include <sodium.h>

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>

#include "copa_mpc/ring.hpp"

namespace copa {

using Key128 = std::array<std::uint8_t, 16>;
using Sha256Digest = std::array<std::uint8_t, 32>;

inline void ensure_sodium() {
  static const bool ok = sodium_init() >= 0;
  if (!ok) throw std::runtime_error("libsodium initialisation failed");
}

// RFC 8439 ChaCha20 keystream (IETF variant, 96-bit nonce) starting at `block_counter`.
inline void chacha20_keystream(std::span<const std::uint8_t, 32> key, std::span<const std::uint8_t, 12> nonce,
                               std::uint32_t block_counter, std::span<std::uint8_t> out) {
  std::fill(out.begin(), out.end(), 0);
  crypto_stream_chacha20_ietf_xor_ic(out.data(), out.data(), out.size(), nonce.data(), block_counter, key.data());
}

inline Sha256Digest sha256(std::span<const std::uint8_t> data) {
  Sha256Digest d{};
  crypto_hash_sha256(d.data(), data.data(), data.size());
  return d;
}

// prf(K, ctr): first 16 keystream bytes of ChaCha20 under key K||K, block 0,
// nonce = ctr as 8 little-endian bytes followed by 4 zero bytes.
inline RingElement prf(const Key128& key, std::uint64_t ctr) {
  std::array<std::uint8_t, 32> full{};
  std::copy(key.begin(), key.end(), full.begin());
  std::copy(key.begin(), key.end(), full.begin() + 16);
  std::array<std::uint8_t, 12> nonce{};
  for (int i = 0; i < 8; ++i) nonce[i] = static_cast<std::uint8_t>(ctr >> (8 * i));
  std::array<std::uint8_t, 16> ks{};
  chacha20_keystream(full, nonce, 0, ks);
  return load_le(ks);
}

inline void random_bytes(std::span<std::uint8_t> out) {
  ensure_sodium();
  randombytes_buf(out.data(), out.size());
}

}  // namespace copa
