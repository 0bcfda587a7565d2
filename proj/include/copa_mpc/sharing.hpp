#pragma once

// 3-of-4 replicated secret sharing over Z_{2^128} and the pairwise key material.
//
// A secret s is split into four additive slots x_0..x_3 with sum s. Party p
// holds every slot except x_p, and every key except K_p.

#include <algorithm>
#include <array>
#include <concepts>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "copa_mpc/crypto.hpp"
#include "copa_mpc/ring.hpp"

namespace copa {

inline constexpr int kParties = 4;
inline constexpr std::size_t kShareRecordBytes = 3 * kRingBytes;

using PartyId = int;

class ShareError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void check_party(PartyId p) {
  if (p < 0 || p >= kParties) throw ShareError("party index out of range: " + std::to_string(p));
}

// The three slot indices held by `party`, ascending.
inline std::array<int, 3> held_slots(PartyId party) {
  check_party(party);
  std::array<int, 3> out{};
  int k = 0;
  for (int g = 0; g < kParties; ++g)
    if (g != party) out[k++] = g;
  return out;
}

// Position of `slot` inside `party`'s ascending held-slot list.
inline int held_position(PartyId party, int slot) { return slot < party ? slot : slot - 1; }

template <typename R>
concept RingRandomness = requires(R r) {
  { r.next_ring() } -> std::same_as<RingElement>;
};

class SystemRandomness {
 public:
  RingElement next_ring() {
    std::array<std::uint8_t, 16> b{};
    random_bytes(b);
    return load_le(b);
  }
};

class SeededRandomness {
 public:
  explicit SeededRandomness(std::uint64_t seed) : gen_(seed) {}
  RingElement next_ring() {
    const std::uint64_t hi = gen_();
    const std::uint64_t lo = gen_();
    return RingElement::from_words(hi, lo);
  }
  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

struct DealtSecret {
  std::array<RingElement, kParties> slots{};

  RingElement secret() const {
    RingElement s;
    for (auto v : slots) s += v;
    return s;
  }
};

template <RingRandomness R>
DealtSecret deal(RingElement secret, R& rng) {
  DealtSecret d;
  for (int g = 1; g < kParties; ++g) d.slots[g] = rng.next_ring();
  d.slots[0] = secret - (d.slots[1] + d.slots[2] + d.slots[3]);
  return d;
}

class ReplicatedShareView {
 public:
  ReplicatedShareView() = default;
  explicit ReplicatedShareView(PartyId party) : party_(party) { check_party(party); }

  PartyId party() const { return party_; }

  RingElement at(int slot) const {
    check_slot(slot);
    return slots_[slot];
  }
  void set(int slot, RingElement v) {
    check_slot(slot);
    slots_[slot] = v;
  }
  bool holds(int slot) const { return slot >= 0 && slot < kParties && slot != party_; }

  // 48-byte record: the held slots ascending, 16 bytes LE each.
  void store(std::span<std::uint8_t> out) const {
    auto held = held_slots(party_);
    for (int k = 0; k < 3; ++k) store_le(slots_[held[k]], out.subspan(16 * k, 16));
  }
  static ReplicatedShareView load(PartyId party, std::span<const std::uint8_t> in) {
    ReplicatedShareView v(party);
    auto held = held_slots(party);
    for (int k = 0; k < 3; ++k) v.slots_[held[k]] = load_le(in.subspan(16 * k, 16));
    return v;
  }

  friend bool operator==(const ReplicatedShareView& a, const ReplicatedShareView& b) {
    if (a.party_ != b.party_) return false;
    for (int g = 0; g < kParties; ++g)
      if (g != a.party_ && a.slots_[g] != b.slots_[g]) return false;
    return true;
  }

 private:
  void check_slot(int slot) const {
    if (slot < 0 || slot >= kParties) throw ShareError("slot index out of range: " + std::to_string(slot));
    if (slot == party_) throw ShareError("party " + std::to_string(party_) + " does not hold its own slot");
  }

  PartyId party_ = 0;
  std::array<RingElement, kParties> slots_{};
};

inline ReplicatedShareView view_of(const DealtSecret& d, PartyId party) {
  ReplicatedShareView v(party);
  for (int g : held_slots(party)) v.set(g, d.slots[g]);
  return v;
}

// Throws ShareError when both views come from the same party or disagree on a common slot.
inline RingElement reconstruct(const ReplicatedShareView& a, const ReplicatedShareView& b) {
  if (a.party() == b.party()) throw ShareError("reconstruct needs views from two distinct parties");
  RingElement sum;
  for (int g = 0; g < kParties; ++g) {
    if (a.holds(g) && b.holds(g) && a.at(g) != b.at(g))
      throw ShareError("inconsistent shares: views disagree on slot " + std::to_string(g));
    sum += a.holds(g) ? a.at(g) : b.at(g);
  }
  return sum;
}

// Keys K_g for the three slots g != owner.
class KeyMaterial {
 public:
  KeyMaterial() = default;
  explicit KeyMaterial(PartyId owner) : owner_(owner) { check_party(owner); }

  PartyId owner() const { return owner_; }
  bool holds(int slot) const { return slot >= 0 && slot < kParties && slot != owner_ && present_[slot]; }

  const Key128& key(int slot) const {
    if (!holds(slot)) throw ShareError("party " + std::to_string(owner_) + " holds no key for slot " + std::to_string(slot));
    return keys_[slot];
  }
  void set(int slot, const Key128& k) {
    if (slot < 0 || slot >= kParties || slot == owner_)
      throw ShareError("party " + std::to_string(owner_) + " may not hold key " + std::to_string(slot));
    keys_[slot] = k;
    present_[slot] = true;
  }
  bool complete() const {
    for (int g = 0; g < kParties; ++g)
      if (g != owner_ && !present_[g]) return false;
    return true;
  }

 private:
  PartyId owner_ = 0;
  std::array<Key128, kParties> keys_{};
  std::array<bool, kParties> present_{};
};

// Distributes four system keys so that K_g goes to every party except g.
inline std::array<KeyMaterial, kParties> allocate_keys(const std::array<Key128, kParties>& system_keys) {
  std::array<KeyMaterial, kParties> out;
  for (int p = 0; p < kParties; ++p) {
    out[p] = KeyMaterial(p);
    for (int g : held_slots(p)) out[p].set(g, system_keys[g]);
  }
  return out;
}

inline std::array<Key128, kParties> fresh_system_keys() {
  std::array<Key128, kParties> keys{};
  for (auto& k : keys) random_bytes(k);
  return keys;
}

// Key file: a sequence of 17-byte records (slot u8, key 16 bytes).
inline std::vector<std::uint8_t> encode_key_file(const KeyMaterial& km) {
  std::vector<std::uint8_t> out;
  for (int g : held_slots(km.owner())) {
    out.push_back(static_cast<std::uint8_t>(g));
    const auto& k = km.key(g);
    out.insert(out.end(), k.begin(), k.end());
  }
  return out;
}

inline KeyMaterial decode_key_file(PartyId owner, std::span<const std::uint8_t> bytes) {
  constexpr std::size_t rec = 17;
  if (bytes.empty() || bytes.size() % rec != 0 || bytes.size() / rec > kParties)
    throw ShareError("malformed key file: size " + std::to_string(bytes.size()) + " is not 1..4 records of 17 bytes");
  KeyMaterial km(owner);
  for (std::size_t off = 0; off < bytes.size(); off += rec) {
    const int slot = bytes[off];
    if (slot >= kParties) throw ShareError("malformed key file: slot " + std::to_string(slot));
    if (slot == owner) throw ShareError("malformed key file: party " + std::to_string(owner) + " must not hold K_" + std::to_string(slot));
    if (km.holds(slot)) throw ShareError("malformed key file: duplicate slot " + std::to_string(slot));
    Key128 k{};
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(off + 1), 16, k.begin());
    km.set(slot, k);
  }
  if (!km.complete()) throw ShareError("malformed key file: party " + std::to_string(owner) + " needs exactly 3 keys");
  return km;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline KeyMaterial load_key_file(PartyId owner, const std::filesystem::path& path) {
  return decode_key_file(owner, read_file_bytes(path));
}

inline std::filesystem::path key_file_name(const std::filesystem::path& dir, PartyId p) {
  return dir / ("party" + std::to_string(p) + ".key");
}

}  // namespace copa
