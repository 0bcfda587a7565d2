#pragma once

// Link timing, fabric counters, and saturation arithmetic.

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "copa_mpc/sharing.hpp"
#include "copa_mpc/wire.hpp"

namespace copa {

struct LinkModel {
  double bandwidth_gbps = 100.0;
  double latency_us = 1.0;

  // latency + serialisation time; 1 Gb/s moves 10^3 bits per microsecond.
  double transfer_time_us(std::uint64_t bytes) const { return latency_us + serialization_us(bytes); }
  double serialization_us(std::uint64_t bytes) const { return 8.0 * static_cast<double>(bytes) / (bandwidth_gbps * 1e3); }

  void validate() const {
    if (!(bandwidth_gbps > 0) || !(latency_us >= 0)) throw std::invalid_argument("link bandwidth must be positive and latency non-negative");
  }
};

// Smallest accelerator count whose combined per-link rate meets the link rate.
inline int min_accels(double link_gbps, double per_accel_gbps) {
  if (!(link_gbps > 0) || !(per_accel_gbps > 0)) throw std::invalid_argument("min_accels: rates must be positive");
  const double ratio = link_gbps / per_accel_gbps;
  return static_cast<int>(std::ceil(ratio * (1.0 - 1e-12)));
}

// Offered load per link with `accels` parallel accelerators, capped by the link.
inline double offered_load_gbps(int accels, double per_accel_gbps, double link_gbps) {
  return std::min(static_cast<double>(accels) * per_accel_gbps, link_gbps);
}

// Counters for one directed link as seen from one endpoint.
struct LinkCounters {
  std::uint64_t payload_bytes = 0;  // PUT and TAGS payloads
  std::uint64_t tag_bytes = 0;      // TAGS payloads only
  std::uint64_t total_bytes = 0;    // every frame, headers included
  std::uint64_t messages = 0;

  LinkCounters& operator+=(const LinkCounters& o) {
    payload_bytes += o.payload_bytes;
    tag_bytes += o.tag_bytes;
    total_bytes += o.total_bytes;
    messages += o.messages;
    return *this;
  }
  friend bool operator==(const LinkCounters&, const LinkCounters&) = default;
};

class AtomicLinkCounters {
 public:
  void record(const WireMessage& m) {
    if (m.type == MessageType::kPut || m.type == MessageType::kTags) payload_.fetch_add(m.payload.size(), std::memory_order_relaxed);
    if (m.type == MessageType::kTags) tags_.fetch_add(m.payload.size(), std::memory_order_relaxed);
    total_.fetch_add(m.wire_bytes(), std::memory_order_relaxed);
    messages_.fetch_add(1, std::memory_order_relaxed);
  }
  LinkCounters load() const {
    return {payload_.load(std::memory_order_relaxed), tags_.load(std::memory_order_relaxed), total_.load(std::memory_order_relaxed),
            messages_.load(std::memory_order_relaxed)};
  }

 private:
  std::atomic<std::uint64_t> payload_{0}, tags_{0}, total_{0}, messages_{0};
};

// One party's view of its links: out[q] for party -> q, in[q] for q -> party.
struct PartyCounters {
  std::array<LinkCounters, kParties> out{};
  std::array<LinkCounters, kParties> in{};
  std::uint64_t ops_completed = 0;

  LinkCounters total_out() const {
    LinkCounters t;
    for (const auto& c : out) t += c;
    return t;
  }
  LinkCounters total_in() const {
    LinkCounters t;
    for (const auto& c : in) t += c;
    return t;
  }
};

struct MetricsSnapshot {
  std::array<PartyCounters, kParties> parties{};
  double elapsed_us = 0;

  // Directed link s -> d as counted by the sender.
  const LinkCounters& link(PartyId s, PartyId d) const { return parties[s].out[d]; }

  double effective_gbps(PartyId s, PartyId d) const {
    return elapsed_us > 0 ? 8.0 * static_cast<double>(link(s, d).payload_bytes) / elapsed_us / 1e3 : 0.0;
  }
};

}  // namespace copa
