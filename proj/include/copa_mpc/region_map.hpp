#pragma once

// Fixed host-memory layout shared by all parties, so remote PUTs need no
// negotiation: four equal segments (input, intermediate, ingress, output).
// The intermediate and ingress segments are split into `batch_slots` slots;
// batch b uses slot b mod batch_slots.

#include <cstdint>
#include <stdexcept>
#include <string>

#include "copa_mpc/command.hpp"
#include "copa_mpc/memory.hpp"

namespace copa {

class RegionMap {
 public:
  RegionMap() = default;
  RegionMap(std::uint64_t memory_size, std::uint32_t batch_slots) : batch_slots_(batch_slots) {
    if (batch_slots == 0) throw std::invalid_argument("batch_slots must be at least 1");
    segment_ = (memory_size / 4) & ~std::uint64_t(63);
    slot_ = (segment_ / batch_slots) & ~std::uint64_t(63);
    if (slot_ == 0) throw std::invalid_argument("memory too small for " + std::to_string(batch_slots) + " batch slots");
  }

  std::uint64_t segment_bytes() const { return segment_; }
  std::uint64_t slot_bytes() const { return slot_; }
  std::uint32_t batch_slots() const { return batch_slots_; }

  ByteRange input() const { return {0, segment_}; }
  ByteRange intermediate() const { return {segment_, segment_}; }
  ByteRange ingress() const { return {2 * segment_, segment_}; }
  ByteRange output() const { return {3 * segment_, segment_}; }

  std::uint64_t intermediate_offset(std::uint64_t batch_id) const { return segment_ + (batch_id % batch_slots_) * slot_; }
  std::uint64_t ingress_offset(std::uint64_t batch_id) const { return 2 * segment_ + (batch_id % batch_slots_) * slot_; }

  // Largest fused-multiply batch whose stage-1 and ingress blocks fit one slot.
  std::uint64_t max_fused_count(ModeFlags mode) const {
    std::uint64_t lo = 0, hi = slot_ / kShareRecordBytes + 1;
    while (lo + 1 < hi) {
      const std::uint64_t mid = (lo + hi) / 2;
      if (stage1_bytes(mode, mid) <= slot_ && ingress_bytes(mode, mid) <= slot_) lo = mid;
      else hi = mid;
    }
    return lo;
  }

  void register_all(HostMemoryRegion& mem) const {
    for (const auto& r : {input(), intermediate(), ingress(), output()}) mem.register_range(r);
  }

 private:
  std::uint32_t batch_slots_ = 4;
  std::uint64_t segment_ = 0;
  std::uint64_t slot_ = 0;
};

}  // namespace copa
