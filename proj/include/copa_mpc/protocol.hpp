#pragma once

// Four-party arithmetic over replicated shares: local addition and the
// two-stage multiplication with a single communication round.
//
// x*y = sum_{a,b} x_a*y_b. The cross term x_a*y_b is assigned to output slot a,
// so z_a = x_a*y. Diagonal terms and every cross term a holder of slot a can
// compute itself are accumulated locally; the one term (a, p) party p cannot
// form (it lacks y_p) is sent to it by a party outside {a, p}, and the fourth
// party sends a hash tag over the same value so p can detect tampering.

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "copa_mpc/crypto.hpp"
#include "copa_mpc/ring.hpp"
#include "copa_mpc/sharing.hpp"

namespace copa {

struct Term {
  int a = 0;  // slot of the x-share
  int b = 0;  // slot of the y-share
  friend constexpr bool operator==(Term, Term) = default;
};

struct TermRole {
  Term term;
  int slot = 0;
  PartyId receiver = 0;
  PartyId sender = 0;
  PartyId verifier = 0;
};

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline TermRole term_roles(int a, int b) {
  if (a < 0 || a >= kParties || b < 0 || b >= kParties) throw ProtocolError("term index out of range");
  if (a == b) throw ProtocolError("diagonal term (" + std::to_string(a) + "," + std::to_string(b) + ") has no roles");
  TermRole r;
  r.term = {a, b};
  r.slot = a;
  r.receiver = b;
  r.sender = (a + 1) % kParties;
  if (r.sender == b) r.sender = (a + 2) % kParties;
  for (int q = 0; q < kParties; ++q)
    if (q != a && q != b && q != r.sender) r.verifier = q;
  return r;
}

namespace detail {
template <typename Pred>
std::array<Term, 3> collect_terms(Pred pred) {
  std::array<Term, 3> out{};
  int k = 0;
  for (int a = 0; a < kParties; ++a)
    for (int b = 0; b < kParties; ++b)
      if (a != b && pred(term_roles(a, b))) {
        if (k == 3) throw ProtocolError("term table invariant violated");
        out[k++] = {a, b};
      }
  if (k != 3) throw ProtocolError("term table invariant violated");
  return out;
}

struct TermTables {
  std::array<std::array<Term, 3>, kParties> egress{}, verifier{}, ingress{};
};
inline const TermTables& term_tables() {
  static const TermTables tables = [] {
    TermTables t;
    for (int p = 0; p < kParties; ++p) {
      t.egress[p] = collect_terms([p](const TermRole& r) { return r.sender == p; });
      t.verifier[p] = collect_terms([p](const TermRole& r) { return r.verifier == p; });
      t.ingress[p] = collect_terms([p](const TermRole& r) { return r.receiver == p; });
    }
    return t;
  }();
  return tables;
}
}  // namespace detail

// Terms party p transmits, ordered by (a, b).
inline const std::array<Term, 3>& egress_terms(PartyId p) {
  check_party(p);
  return detail::term_tables().egress[p];
}

// Terms party p tags, ordered by (a, b).
inline const std::array<Term, 3>& verifier_terms(PartyId p) {
  check_party(p);
  return detail::term_tables().verifier[p];
}

// Terms (a, p) party p receives, ordered by a.
inline const std::array<Term, 3>& ingress_terms(PartyId p) {
  check_party(p);
  return detail::term_tables().ingress[p];
}

// Index of term (a, p) within ingress_terms(p); equals held_position(p, a).
inline int ingress_index(PartyId p, int a) { return held_position(p, a); }

struct ModeFlags {
  bool malicious = false;
  bool masking = true;
  bool batched_hash = false;  // one SHA-256 per link per batch instead of per-term tags

  bool per_term_tags() const { return malicious && !batched_hash; }
  bool link_digests() const { return malicious && batched_hash; }

  std::uint8_t bits() const {
    return static_cast<std::uint8_t>((malicious ? 1 : 0) | (masking ? 2 : 0) | (batched_hash ? 4 : 0));
  }
  static ModeFlags from_bits(std::uint8_t f) { return {(f & 1) != 0, (f & 2) != 0, (f & 4) != 0}; }
  friend bool operator==(ModeFlags, ModeFlags) = default;
};

struct WireValue {
  Term term;
  RingElement payload;
};

inline constexpr std::size_t kTagBytes = 8;
using TagBytes = std::array<std::uint8_t, kTagBytes>;

struct VerificationTag {
  Term term;
  TagBytes tag{};
};

// ctr = ctr_base + 16*element + 4a + b, rejecting wraparound.
inline std::uint64_t term_counter(std::uint64_t ctr_base, std::uint64_t element_index, Term t) {
  std::uint64_t scaled = 0, ctr = 0;
  if (__builtin_mul_overflow(element_index, std::uint64_t{16}, &scaled) ||
      __builtin_add_overflow(ctr_base, scaled, &ctr) ||
      __builtin_add_overflow(ctr, std::uint64_t(4 * t.a + t.b), &ctr))
    throw ProtocolError("PRF counter overflow");
  return ctr;
}

// First 8 bytes of SHA-256(payload 16B LE || batch_id u64 LE || element u64 LE || a u8 || b u8).
inline TagBytes compute_tag(std::span<const std::uint8_t> payload16, std::uint64_t batch_id, std::uint64_t element_index,
                            int a, int b) {
  if (payload16.size() != kRingBytes) throw ProtocolError("tag payload must be 16 bytes");
  std::array<std::uint8_t, 34> msg{};
  std::copy(payload16.begin(), payload16.end(), msg.begin());
  for (int i = 0; i < 8; ++i) {
    msg[16 + i] = static_cast<std::uint8_t>(batch_id >> (8 * i));
    msg[24 + i] = static_cast<std::uint8_t>(element_index >> (8 * i));
  }
  msg[32] = static_cast<std::uint8_t>(a);
  msg[33] = static_cast<std::uint8_t>(b);
  const auto d = sha256(msg);
  TagBytes t{};
  std::copy_n(d.begin(), kTagBytes, t.begin());
  return t;
}

inline TagBytes compute_tag(RingElement payload, std::uint64_t batch_id, std::uint64_t element_index, Term t) {
  const auto bytes = to_bytes(payload);
  return compute_tag(bytes, batch_id, element_index, t.a, t.b);
}

// SHA-256(batch_id u64 LE || a u8 || b u8 || payload_0 || payload_1 || ...) for one link.
inline Sha256Digest link_digest(std::uint64_t batch_id, Term t, std::span<const std::uint8_t> payloads) {
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  std::array<std::uint8_t, 10> head{};
  for (int i = 0; i < 8; ++i) head[i] = static_cast<std::uint8_t>(batch_id >> (8 * i));
  head[8] = static_cast<std::uint8_t>(t.a);
  head[9] = static_cast<std::uint8_t>(t.b);
  crypto_hash_sha256_update(&st, head.data(), head.size());
  crypto_hash_sha256_update(&st, payloads.data(), payloads.size());
  Sha256Digest d{};
  crypto_hash_sha256_final(&st, d.data());
  return d;
}

struct StageOneOutput {
  PartyId party = 0;
  std::array<RingElement, 3> local_acc{};       // held slots ascending
  std::array<WireValue, 3> egress{};            // egress_terms(party) order
  std::array<WireValue, 3> verified{};          // verifier_terms(party) order; filled when malicious
  std::optional<std::array<VerificationTag, 3>> tags;  // per-term malicious mode only
};

struct ElementContext {
  std::uint64_t batch_id = 0;
  std::uint64_t ctr_base = 0;
  std::uint64_t element_index = 0;
};

namespace detail {
inline RingElement wire_payload(const ReplicatedShareView& x, const ReplicatedShareView& y, const KeyMaterial& keys,
                                const ElementContext& ctx, Term t, bool masking) {
  RingElement v = x.at(t.a) * y.at(t.b);
  if (masking) v += prf(keys.key(t.a), term_counter(ctx.ctr_base, ctx.element_index, t));
  return v;
}
inline void check_same_party(PartyId a, PartyId b) {
  if (a != b) throw ProtocolError("mismatched party indices " + std::to_string(a) + " and " + std::to_string(b));
}
}  // namespace detail

inline StageOneOutput mul_stage1(const ReplicatedShareView& x, const ReplicatedShareView& y, const KeyMaterial& keys,
                                 const ElementContext& ctx, ModeFlags mode) {
  const PartyId p = x.party();
  detail::check_same_party(p, y.party());
  detail::check_same_party(p, keys.owner());
  // Reject an exhausted counter space up front, even when masking is off.
  term_counter(ctx.ctr_base, ctx.element_index, Term{3, 3});

  StageOneOutput out;
  out.party = p;
  const auto held = held_slots(p);
  for (int k = 0; k < 3; ++k) {
    const int g = held[k];
    RingElement acc = x.at(g) * y.at(g);
    for (int b = 0; b < kParties; ++b)
      if (b != g && b != p) acc += x.at(g) * y.at(b);
    out.local_acc[k] = acc;
  }
  const auto eg = egress_terms(p);
  for (int k = 0; k < 3; ++k) out.egress[k] = {eg[k], detail::wire_payload(x, y, keys, ctx, eg[k], mode.masking)};
  if (mode.malicious) {
    const auto vt = verifier_terms(p);
    for (int k = 0; k < 3; ++k) out.verified[k] = {vt[k], detail::wire_payload(x, y, keys, ctx, vt[k], mode.masking)};
    if (mode.per_term_tags()) {
      std::array<VerificationTag, 3> tags{};
      for (int k = 0; k < 3; ++k)
        tags[k] = {vt[k], compute_tag(out.verified[k].payload, ctx.batch_id, ctx.element_index, vt[k])};
      out.tags = tags;
    }
  }
  return out;
}

struct VerificationFailure {
  std::uint64_t batch_id = 0;
  std::uint64_t element_index = 0;
  Term term;
};

using StageTwoResult = std::variant<ReplicatedShareView, VerificationFailure>;

// `ingress` holds the terms (a, p) ordered by a; `ingress_tags` the matching
// tags in per-term malicious mode.
inline StageTwoResult mul_stage2(PartyId p, std::span<const RingElement, 3> local_acc,
                                 std::span<const WireValue, 3> ingress,
                                 const std::optional<std::array<VerificationTag, 3>>& ingress_tags,
                                 const KeyMaterial& keys, const ElementContext& ctx, ModeFlags mode) {
  detail::check_same_party(p, keys.owner());
  const auto expected = ingress_terms(p);
  for (int k = 0; k < 3; ++k)
    if (!(ingress[k].term == expected[k])) throw ProtocolError("ingress terms out of canonical order");

  if (mode.per_term_tags()) {
    if (!ingress_tags) throw ProtocolError("malicious mode requires ingress tags");
    for (int k = 0; k < 3; ++k) {
      const auto want = compute_tag(ingress[k].payload, ctx.batch_id, ctx.element_index, expected[k]);
      if ((*ingress_tags)[k].tag != want) return VerificationFailure{ctx.batch_id, ctx.element_index, expected[k]};
    }
  }

  ReplicatedShareView z(p);
  const auto held = held_slots(p);
  for (int k = 0; k < 3; ++k) {
    RingElement v = ingress[k].payload;
    if (mode.masking) v -= prf(keys.key(held[k]), term_counter(ctx.ctr_base, ctx.element_index, expected[k]));
    z.set(held[k], local_acc[k] + v);
  }
  return z;
}

inline ReplicatedShareView add_local(const ReplicatedShareView& x, const ReplicatedShareView& y) {
  detail::check_same_party(x.party(), y.party());
  ReplicatedShareView z(x.party());
  for (int g : held_slots(x.party())) z.set(g, x.at(g) + y.at(g));
  return z;
}

}  // namespace copa
