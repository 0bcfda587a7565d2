#pragma once

// Lookaside command records, the accelerator cost model, and completion events.

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include "copa_mpc/protocol.hpp"
#include "copa_mpc/sharing.hpp"

namespace copa {

enum class Opcode : std::uint8_t {
  kAdd = 0x01,
  kMulStage1 = 0x02,
  kMulStage2 = 0x03,
  kMulFused = 0x04,
};

inline const char* opcode_name(Opcode op) {
  switch (op) {
    case Opcode::kAdd: return "ADD";
    case Opcode::kMulStage1: return "MUL_STAGE1";
    case Opcode::kMulStage2: return "MUL_STAGE2";
    case Opcode::kMulFused: return "MUL_FUSED";
  }
  return "UNKNOWN";
}

inline bool known_opcode(std::uint8_t v) { return v >= 0x01 && v <= 0x04; }

class CommandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kCommandBytes = 48;

// Batch ids at or above this value are reserved for fabric GET correlation.
inline constexpr std::uint64_t kReservedBatchBit = 1ull << 63;

struct LookasideCommand {
  Opcode opcode = Opcode::kAdd;
  std::uint8_t flags = 0;
  std::uint8_t src_party = 0;
  std::uint8_t dst_party = 0;
  std::uint32_t count = 0;
  std::uint64_t batch_id = 0;
  std::uint64_t src_a = 0;
  std::uint64_t src_b = 0;
  std::uint64_t dst = 0;
  std::uint64_t ctr_base = 0;

  ModeFlags mode() const { return ModeFlags::from_bits(flags); }
  friend bool operator==(const LookasideCommand&, const LookasideCommand&) = default;
};

namespace detail {
inline void put_u32(std::span<std::uint8_t> out, std::size_t at, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline void put_u64(std::span<std::uint8_t> out, std::size_t at, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out[at + i] = static_cast<std::uint8_t>(v >> (8 * i));
}
inline std::uint32_t get_u32(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | in[at + i];
  return v;
}
inline std::uint64_t get_u64(std::span<const std::uint8_t> in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | in[at + i];
  return v;
}
}  // namespace detail

inline std::array<std::uint8_t, kCommandBytes> encode_command(const LookasideCommand& c) {
  std::array<std::uint8_t, kCommandBytes> b{};
  b[0] = static_cast<std::uint8_t>(c.opcode);
  b[1] = c.flags;
  b[2] = c.src_party;
  b[3] = c.dst_party;
  detail::put_u32(b, 4, c.count);
  detail::put_u64(b, 8, c.batch_id);
  detail::put_u64(b, 16, c.src_a);
  detail::put_u64(b, 24, c.src_b);
  detail::put_u64(b, 32, c.dst);
  detail::put_u64(b, 40, c.ctr_base);
  return b;
}

inline LookasideCommand decode_command(std::span<const std::uint8_t> b) {
  if (b.size() != kCommandBytes) throw CommandError("command record must be 48 bytes, got " + std::to_string(b.size()));
  if (!known_opcode(b[0])) throw CommandError("unknown opcode 0x" + std::to_string(b[0]));
  LookasideCommand c;
  c.opcode = static_cast<Opcode>(b[0]);
  c.flags = b[1];
  c.src_party = b[2];
  c.dst_party = b[3];
  c.count = detail::get_u32(b, 4);
  c.batch_id = detail::get_u64(b, 8);
  c.src_a = detail::get_u64(b, 16);
  c.src_b = detail::get_u64(b, 24);
  c.dst = detail::get_u64(b, 32);
  c.ctr_base = detail::get_u64(b, 40);
  return c;
}

// Bytes of verification data per batch: three tag blocks of 8 bytes per
// element, or three 32-byte link digests.
inline std::uint64_t verification_bytes(ModeFlags mode, std::uint64_t count) {
  if (mode.per_term_tags()) return 3 * kTagBytes * count;
  if (mode.link_digests()) return 3 * 32;
  return 0;
}

// Stage-1 record block: local accumulators (48n), egress blocks (3 x 16n),
// then the verification data this party emits.
inline std::uint64_t stage1_bytes(ModeFlags mode, std::uint64_t count) {
  return 2 * kShareRecordBytes * count + verification_bytes(mode, count);
}

// Ingress block: three payload blocks (3 x 16n) in canonical ingress order,
// then the matching verification data.
inline std::uint64_t ingress_bytes(ModeFlags mode, std::uint64_t count) {
  return kShareRecordBytes * count + verification_bytes(mode, count);
}

// Declared lengths of (src_a, src_b, dst) for a command.
struct Footprint {
  std::uint64_t src_a = 0;
  std::uint64_t src_b = 0;
  std::uint64_t dst = 0;
};

inline Footprint footprint(const LookasideCommand& c) {
  const std::uint64_t n = c.count;
  const std::uint64_t rec = kShareRecordBytes * n;
  switch (c.opcode) {
    case Opcode::kAdd:
    case Opcode::kMulFused: return {rec, rec, rec};
    case Opcode::kMulStage1: return {rec, rec, stage1_bytes(c.mode(), n)};
    case Opcode::kMulStage2: return {rec, ingress_bytes(c.mode(), n), rec};
  }
  throw CommandError("unknown opcode");
}

struct AccelCostModel {
  double clock_mhz = 275.0;
  double cycles_per_element = 2.0;
  double dma_startup_us = 1.0;

  void validate() const {
    if (!(clock_mhz > 0) || !(cycles_per_element > 0) || !(dma_startup_us > 0))
      throw CommandError("cost model parameters must be strictly positive");
  }
  // Pipelined streaming time for `count` elements, excluding startup.
  double stream_time_us(std::uint64_t count) const { return static_cast<double>(count) * cycles_per_element / clock_mhz; }
  double job_time_us(std::uint64_t count) const { return dma_startup_us + stream_time_us(count); }
  double ops_per_second(std::uint64_t count) const { return static_cast<double>(count) / job_time_us(count) * 1e6; }
};

inline constexpr double kBaseBitsPerLink = 128.0;       // one 128-bit wire value per multiply per link
inline constexpr double kMaliciousBitsPerLink = 192.0;  // plus one 64-bit tag

// Per directed link throughput of one accelerator, Gb/s.
inline double per_link_rate(const AccelCostModel& m, bool malicious) {
  const double bits = malicious ? kMaliciousBitsPerLink : kBaseBitsPerLink;
  return bits * (m.clock_mhz * 1e6 / m.cycles_per_element) / 1e9;
}

enum class CompletionStatus : std::uint8_t { kOk = 0, kAbort = 1, kError = 2 };

inline const char* status_name(CompletionStatus s) {
  switch (s) {
    case CompletionStatus::kOk: return "ok";
    case CompletionStatus::kAbort: return "abort";
    case CompletionStatus::kError: return "error";
  }
  return "?";
}

inline constexpr std::uint64_t kUnknownElement = ~std::uint64_t(0);

struct CounterDelta {
  std::uint64_t payload_out = 0;
  std::uint64_t payload_in = 0;
  std::uint64_t messages_out = 0;
};

struct CompletionEvent {
  std::uint64_t ticket = 0;
  std::uint64_t batch_id = 0;
  Opcode opcode = Opcode::kAdd;
  CompletionStatus status = CompletionStatus::kOk;
  std::uint64_t failing_element = kUnknownElement;
  Term failing_term{};
  std::string message;
  double simulated_time_us = 0;  // cost-model accelerator time for the job
  double started_us = 0;         // runtime clock at dispatch
  double finished_us = 0;        // runtime clock at completion
  int instance = -1;
  bool detected_here = false;  // abort raised by this party's own tag check
  CounterDelta counters;

  bool ok() const { return status == CompletionStatus::kOk; }
};

}  // namespace copa
