#pragma once

// Batch kernels over the accelerator's byte layouts.
//
// share record        48 B per element: held slots ascending, 16 B LE each
// stage-1 block       local_acc records (48n) | egress blocks (3 x 16n, egress_terms order)
//                     | tags (3 x 8n, verifier_terms order) or link digests (3 x 32 B)
// ingress block       payload blocks (3 x 16n, ingress_terms order)
//                     | tags (3 x 8n) or link digests (3 x 32 B), same order

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "copa_mpc/command.hpp"
#include "copa_mpc/protocol.hpp"
#include "copa_mpc/sharing.hpp"

namespace copa::kernels {

namespace detail {
inline void require(std::span<const std::uint8_t> s, std::uint64_t n, const char* what) {
  if (s.size() < n) throw std::length_error(std::string("kernel buffer too small: ") + what);
}
}  // namespace detail

inline void add_batch(PartyId p, std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::span<std::uint8_t> out,
                      std::uint64_t n) {
  const std::uint64_t bytes = kShareRecordBytes * n;
  detail::require(a, bytes, "add src_a");
  detail::require(b, bytes, "add src_b");
  detail::require(out, bytes, "add dst");
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto off = kShareRecordBytes * i;
    auto x = ReplicatedShareView::load(p, a.subspan(off, kShareRecordBytes));
    auto y = ReplicatedShareView::load(p, b.subspan(off, kShareRecordBytes));
    add_local(x, y).store(out.subspan(off, kShareRecordBytes));
  }
}

struct BatchContext {
  PartyId party = 0;
  ModeFlags mode;
  std::uint64_t batch_id = 0;
  std::uint64_t ctr_base = 0;
  std::uint64_t count = 0;
};

inline void stage1_batch(const BatchContext& ctx, const KeyMaterial& keys, std::span<const std::uint8_t> a,
                         std::span<const std::uint8_t> b, std::span<std::uint8_t> out) {
  const std::uint64_t n = ctx.count;
  detail::require(a, kShareRecordBytes * n, "stage1 src_a");
  detail::require(b, kShareRecordBytes * n, "stage1 src_b");
  detail::require(out, stage1_bytes(ctx.mode, n), "stage1 dst");
  const std::uint64_t egress_base = kShareRecordBytes * n;
  const std::uint64_t verify_base = 2 * kShareRecordBytes * n;
  std::array<std::vector<std::uint8_t>, 3> link_payloads;
  if (ctx.mode.link_digests())
    for (auto& v : link_payloads) v.resize(kRingBytes * n);

  for (std::uint64_t i = 0; i < n; ++i) {
    const auto off = kShareRecordBytes * i;
    auto x = ReplicatedShareView::load(ctx.party, a.subspan(off, kShareRecordBytes));
    auto y = ReplicatedShareView::load(ctx.party, b.subspan(off, kShareRecordBytes));
    const auto s1 = mul_stage1(x, y, keys, {ctx.batch_id, ctx.ctr_base, i}, ctx.mode);
    for (int k = 0; k < 3; ++k) store_le(s1.local_acc[k], out.subspan(off + kRingBytes * k, kRingBytes));
    for (int k = 0; k < 3; ++k)
      store_le(s1.egress[k].payload, out.subspan(egress_base + kRingBytes * (n * k + i), kRingBytes));
    if (s1.tags) {
      for (int k = 0; k < 3; ++k) {
        const auto& t = (*s1.tags)[k].tag;
        std::copy(t.begin(), t.end(), out.begin() + static_cast<std::ptrdiff_t>(verify_base + kTagBytes * (n * k + i)));
      }
    } else if (ctx.mode.link_digests()) {
      for (int k = 0; k < 3; ++k) store_le(s1.verified[k].payload, std::span(link_payloads[k]).subspan(kRingBytes * i, kRingBytes));
    }
  }
  if (ctx.mode.link_digests()) {
    const auto& vt = verifier_terms(ctx.party);
    for (int k = 0; k < 3; ++k) {
      const auto d = link_digest(ctx.batch_id, vt[k], link_payloads[k]);
      std::copy(d.begin(), d.end(), out.begin() + static_cast<std::ptrdiff_t>(verify_base + 32 * k));
    }
  }
}

inline std::optional<VerificationFailure> stage2_batch(const BatchContext& ctx, const KeyMaterial& keys,
                                                       std::span<const std::uint8_t> local, std::span<const std::uint8_t> ingress,
                                                       std::span<std::uint8_t> out) {
  const std::uint64_t n = ctx.count;
  detail::require(local, kShareRecordBytes * n, "stage2 local accumulators");
  detail::require(ingress, ingress_bytes(ctx.mode, n), "stage2 ingress");
  detail::require(out, kShareRecordBytes * n, "stage2 dst");
  const auto& terms = ingress_terms(ctx.party);
  const std::uint64_t verify_base = kShareRecordBytes * n;

  if (ctx.mode.link_digests()) {
    for (int j = 0; j < 3; ++j) {
      const auto want = link_digest(ctx.batch_id, terms[j], ingress.subspan(kRingBytes * n * j, kRingBytes * n));
      if (!std::equal(want.begin(), want.end(), ingress.begin() + static_cast<std::ptrdiff_t>(verify_base + 32 * j)))
        return VerificationFailure{ctx.batch_id, kUnknownElement, terms[j]};
    }
  }

  for (std::uint64_t i = 0; i < n; ++i) {
    std::array<RingElement, 3> acc{};
    std::array<WireValue, 3> in{};
    for (int k = 0; k < 3; ++k) {
      acc[k] = load_le(local.subspan(kShareRecordBytes * i + kRingBytes * k, kRingBytes));
      in[k] = {terms[k], load_le(ingress.subspan(kRingBytes * (n * k + i), kRingBytes))};
    }
    std::optional<std::array<VerificationTag, 3>> tags;
    if (ctx.mode.per_term_tags()) {
      tags.emplace();
      for (int k = 0; k < 3; ++k) {
        (*tags)[k].term = terms[k];
        const auto at = ingress.subspan(verify_base + kTagBytes * (n * k + i), kTagBytes);
        std::copy(at.begin(), at.end(), (*tags)[k].tag.begin());
      }
    }
    auto r = mul_stage2(ctx.party, acc, in, tags, keys, {ctx.batch_id, ctx.ctr_base, i}, ctx.mode);
    if (auto* f = std::get_if<VerificationFailure>(&r)) return *f;
    std::get<ReplicatedShareView>(r).store(out.subspan(kShareRecordBytes * i, kShareRecordBytes));
  }
  return std::nullopt;
}

// Where block k of `party`'s stage-1 egress (or verification data) lands at its receiver.
struct Route {
  PartyId receiver = 0;
  int ingress_block = 0;
};

inline Route egress_route(PartyId sender, int k) {
  const Term t = egress_terms(sender)[k];
  const auto r = term_roles(t.a, t.b);
  return {r.receiver, ingress_index(r.receiver, t.a)};
}

inline Route verifier_route(PartyId verifier, int k) {
  const Term t = verifier_terms(verifier)[k];
  const auto r = term_roles(t.a, t.b);
  return {r.receiver, ingress_index(r.receiver, t.a)};
}

}  // namespace copa::kernels
