#pragma once

// Fabric framing: 32-byte little-endian header followed by the payload.
//
//   0  magic u32 = 0x434F5041 ("COPA")
//   4  version u8 = 1
//   5  type u8
//   6  src_party u8
//   7  dst_party u8
//   8  batch_id u64
//  16  offset u64
//  24  payload_len u32
//  28  reserved u32 = 0
//
// GET carries no payload bytes; its payload_len is the requested length.

#include <array>
#include <cstring>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "copa_mpc/command.hpp"

namespace copa {

inline constexpr std::uint32_t kWireMagic = 0x434F5041;
inline constexpr std::uint8_t kWireVersion = 1;
inline constexpr std::size_t kHeaderBytes = 32;
inline constexpr std::size_t kAbortPayloadBytes = 12;
inline constexpr std::size_t kCompletionPayloadBytes = 24;
inline constexpr std::uint32_t kMaxPayloadBytes = 1u << 30;

enum class MessageType : std::uint8_t {
  kPut = 1,
  kTrigger = 2,
  kTags = 3,
  kCompletion = 4,
  kAbort = 5,
  kGet = 6,
};

inline const char* message_type_name(MessageType t) {
  switch (t) {
    case MessageType::kPut: return "PUT";
    case MessageType::kTrigger: return "TRIGGER";
    case MessageType::kTags: return "TAGS";
    case MessageType::kCompletion: return "COMPLETION";
    case MessageType::kAbort: return "ABORT";
    case MessageType::kGet: return "GET";
  }
  return "?";
}

class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WireMessage {
  MessageType type = MessageType::kPut;
  std::uint8_t src = 0;
  std::uint8_t dst = 0;
  std::uint64_t batch_id = 0;
  std::uint64_t offset = 0;
  std::uint32_t payload_len = 0;  // equals payload.size() except for GET
  std::vector<std::uint8_t> payload;

  // Bytes this message occupies on the wire.
  std::size_t wire_bytes() const { return kHeaderBytes + payload.size(); }
  friend bool operator==(const WireMessage&, const WireMessage&) = default;
};

namespace detail {
inline void check_payload_shape(MessageType type, std::uint32_t len) {
  switch (type) {
    case MessageType::kPut:
    case MessageType::kGet: return;
    case MessageType::kTrigger:
      if (len != kCommandBytes) throw WireError("TRIGGER payload must be 48 bytes, got " + std::to_string(len));
      return;
    case MessageType::kTags:
      if (len % kTagBytes != 0) throw WireError("TAGS payload must be a multiple of 8 bytes, got " + std::to_string(len));
      return;
    case MessageType::kCompletion:
      if (len != kCompletionPayloadBytes) throw WireError("COMPLETION payload must be 24 bytes, got " + std::to_string(len));
      return;
    case MessageType::kAbort:
      if (len != kAbortPayloadBytes) throw WireError("ABORT payload must be 12 bytes, got " + std::to_string(len));
      return;
  }
  throw WireError("unknown message type");
}
}  // namespace detail

inline std::vector<std::uint8_t> encode(const WireMessage& m) {
  const bool is_get = m.type == MessageType::kGet;
  if (!is_get && m.payload_len != m.payload.size()) throw WireError("payload_len does not match payload size");
  if (is_get && !m.payload.empty()) throw WireError("GET carries no payload bytes");
  detail::check_payload_shape(m.type, m.payload_len);
  std::vector<std::uint8_t> out(kHeaderBytes + m.payload.size());
  std::span<std::uint8_t> h(out.data(), kHeaderBytes);
  detail::put_u32(h, 0, kWireMagic);
  h[4] = kWireVersion;
  h[5] = static_cast<std::uint8_t>(m.type);
  h[6] = m.src;
  h[7] = m.dst;
  detail::put_u64(h, 8, m.batch_id);
  detail::put_u64(h, 16, m.offset);
  detail::put_u32(h, 24, m.payload_len);
  detail::put_u32(h, 28, 0);
  std::copy(m.payload.begin(), m.payload.end(), out.begin() + kHeaderBytes);
  return out;
}

// Parses and validates a header; the returned message has an empty payload.
inline WireMessage decode_header(std::span<const std::uint8_t> h) {
  if (h.size() < kHeaderBytes) throw WireError("short header");
  if (detail::get_u32(h, 0) != kWireMagic) throw WireError("bad magic");
  if (h[4] != kWireVersion) throw WireError("unsupported version " + std::to_string(h[4]));
  if (h[5] < 1 || h[5] > 6) throw WireError("unknown message type " + std::to_string(h[5]));
  if (detail::get_u32(h, 28) != 0) throw WireError("reserved header field must be zero");
  WireMessage m;
  m.type = static_cast<MessageType>(h[5]);
  m.src = h[6];
  m.dst = h[7];
  m.batch_id = detail::get_u64(h, 8);
  m.offset = detail::get_u64(h, 16);
  m.payload_len = detail::get_u32(h, 24);
  if (m.src >= kParties || m.dst >= kParties) throw WireError("party index out of range");
  if (m.payload_len > kMaxPayloadBytes) throw WireError("payload too large");
  detail::check_payload_shape(m.type, m.payload_len);
  return m;
}

// Number of payload bytes that follow a decoded header.
inline std::size_t body_bytes(const WireMessage& header) {
  return header.type == MessageType::kGet ? 0 : header.payload_len;
}

inline WireMessage decode(std::span<const std::uint8_t> bytes) {
  WireMessage m = decode_header(bytes);
  const std::size_t body = body_bytes(m);
  if (bytes.size() != kHeaderBytes + body) throw WireError("frame length does not match payload_len");
  m.payload.assign(bytes.begin() + kHeaderBytes, bytes.end());
  return m;
}

enum class AbortReason : std::uint32_t {
  kTagMismatch = 1,
  kUnregisteredRange = 2,
  kRejected = 3,
  kTimeout = 4,
  kPoisoned = 5,
};

struct AbortInfo {
  AbortReason reason = AbortReason::kTagMismatch;
  std::uint64_t element = kUnknownElement;
};

inline std::vector<std::uint8_t> encode_abort(const AbortInfo& a) {
  std::vector<std::uint8_t> out(kAbortPayloadBytes);
  detail::put_u32(out, 0, static_cast<std::uint32_t>(a.reason));
  detail::put_u64(out, 4, a.element);
  return out;
}

inline AbortInfo decode_abort(std::span<const std::uint8_t> p) {
  if (p.size() != kAbortPayloadBytes) throw WireError("ABORT payload must be 12 bytes");
  return {static_cast<AbortReason>(detail::get_u32(p, 0)), detail::get_u64(p, 4)};
}

// COMPLETION payload: ticket u64, simulated_time_us f64 bits, opcode u8,
// status u8, 6 reserved bytes. kAccepted acknowledges a TRIGGER; the final
// status follows when the job finishes.
inline constexpr std::uint8_t kCompletionAccepted = 3;

struct CompletionInfo {
  std::uint64_t ticket = 0;
  double simulated_time_us = 0;
  std::uint8_t opcode = 0;
  std::uint8_t status = 0;
};

inline std::vector<std::uint8_t> encode_completion(const CompletionInfo& c) {
  std::vector<std::uint8_t> out(kCompletionPayloadBytes);
  detail::put_u64(out, 0, c.ticket);
  std::uint64_t bits = 0;
  static_assert(sizeof(double) == sizeof(std::uint64_t));
  std::memcpy(&bits, &c.simulated_time_us, sizeof bits);
  detail::put_u64(out, 8, bits);
  out[16] = c.opcode;
  out[17] = c.status;
  return out;
}

inline CompletionInfo decode_completion(std::span<const std::uint8_t> p) {
  if (p.size() != kCompletionPayloadBytes) throw WireError("COMPLETION payload must be 24 bytes");
  CompletionInfo c;
  c.ticket = detail::get_u64(p, 0);
  const std::uint64_t bits = detail::get_u64(p, 8);
  std::memcpy(&c.simulated_time_us, &bits, sizeof bits);
  c.opcode = p[16];
  c.status = p[17];
  return c;
}

}  // namespace copa
