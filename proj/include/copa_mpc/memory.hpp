#pragma once

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace copa {

inline constexpr std::size_t kDefaultMemoryBytes = 64ull << 20;

class MemoryError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

struct ByteRange {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  std::uint64_t end() const { return offset + length; }
  bool overlaps(const ByteRange& o) const {
    return length != 0 && o.length != 0 && offset < o.end() && o.offset < end();
  }
  bool contains(const ByteRange& o) const { return o.offset >= offset && o.end() <= end(); }
};

// Flat host memory shared with the accelerator and the fabric. Pages are
// zero-filled lazily by the allocator.
class HostMemoryRegion {
 public:
  explicit HostMemoryRegion(std::size_t size = kDefaultMemoryBytes)
      : size_(size), bytes_(static_cast<std::uint8_t*>(std::calloc(size ? size : 1, 1))) {
    if (!bytes_) throw std::bad_alloc();
  }

  std::size_t size() const { return size_; }

  bool in_bounds(std::uint64_t offset, std::uint64_t length) const {
    return offset <= size_ && length <= size_ - offset;
  }

  void register_range(ByteRange r) {
    check(r.offset, r.length);
    registered_.push_back(r);
  }
  void clear_registrations() { registered_.clear(); }
  const std::vector<ByteRange>& registrations() const { return registered_; }

  // True when [offset, offset+length) lies inside a single registered range.
  bool is_registered(std::uint64_t offset, std::uint64_t length) const {
    if (!in_bounds(offset, length)) return false;
    const ByteRange want{offset, length};
    for (const auto& r : registered_)
      if (r.contains(want)) return true;
    return false;
  }

  std::span<std::uint8_t> view(std::uint64_t offset, std::uint64_t length) {
    check(offset, length);
    return {bytes_.get() + offset, static_cast<std::size_t>(length)};
  }
  std::span<const std::uint8_t> view(std::uint64_t offset, std::uint64_t length) const {
    check(offset, length);
    return {bytes_.get() + offset, static_cast<std::size_t>(length)};
  }

  std::vector<std::uint8_t> read(std::uint64_t offset, std::uint64_t length) const {
    auto v = view(offset, length);
    return {v.begin(), v.end()};
  }
  void write(std::uint64_t offset, std::span<const std::uint8_t> data) {
    auto v = view(offset, data.size());
    if (!data.empty()) std::memcpy(v.data(), data.data(), data.size());
  }

 private:
  struct Free {
    void operator()(std::uint8_t* p) const { std::free(p); }
  };

  void check(std::uint64_t offset, std::uint64_t length) const {
    if (!in_bounds(offset, length))
      throw MemoryError("range [" + std::to_string(offset) + ", +" + std::to_string(length) +
                        ") outside host memory of " + std::to_string(size_) + " bytes");
  }

  std::size_t size_;
  std::unique_ptr<std::uint8_t, Free> bytes_;
  std::vector<ByteRange> registered_;
};

}  // namespace copa
