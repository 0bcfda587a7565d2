#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "copa_mpc/sharing.hpp"
#include "test_util.hpp"

using copa::DealtSecret;
using copa::RingElement;
using copa::ShareError;

namespace {

struct ZeroRandomness {
  RingElement next_ring() { return RingElement(0); }
};

DealtSecret slots(std::uint64_t a, std::uint64_t b, std::uint64_t c, std::uint64_t d) {
  return DealtSecret{{RingElement(a), RingElement(b), RingElement(c), RingElement(d)}};
}

TEST(Deal, RoundTrip) {
  copa::SeededRandomness rng(3);
  auto d = copa::deal(RingElement(10), rng);
  EXPECT_EQ(d.secret(), RingElement(10));
}

TEST(Deal, ZeroRandomnessGivesZeroSlots) {
  ZeroRandomness z;
  auto d = copa::deal(RingElement(0), z);
  for (auto s : d.slots) EXPECT_EQ(s, RingElement(0));
}

TEST(Deal, ReconstructPropertyLoop) {
  std::mt19937_64 g(5);
  copa::SeededRandomness rng(6);
  for (int i = 0; i < 10000; ++i) {
    const auto s = copa::testing::random_ring(g);
    const auto d = copa::deal(s, rng);
    ASSERT_EQ(d.secret(), s);
    ASSERT_EQ(copa::reconstruct(copa::view_of(d, i % 4), copa::view_of(d, (i + 1 + i % 3) % 4)), s);
  }
}

TEST(ViewOf, DropsOwnSlot) {
  auto d = slots(1, 2, 3, 4);
  auto v0 = copa::view_of(d, 0);
  EXPECT_EQ(v0.at(1), RingElement(2));
  EXPECT_EQ(v0.at(2), RingElement(3));
  EXPECT_EQ(v0.at(3), RingElement(4));
  EXPECT_THROW(v0.at(0), ShareError);
  auto v3 = copa::view_of(d, 3);
  EXPECT_EQ(v3.at(0), RingElement(1));
  EXPECT_EQ(v3.at(1), RingElement(2));
  EXPECT_EQ(v3.at(2), RingElement(3));
  EXPECT_THROW(v3.at(3), ShareError);
  EXPECT_THROW(copa::view_of(d, 4), ShareError);
  EXPECT_THROW(copa::view_of(d, -1), ShareError);
}

TEST(ViewOf, TwoViewsCoverAllSlots) {
  auto d = slots(1, 2, 3, 4);
  auto v0 = copa::view_of(d, 0), v1 = copa::view_of(d, 1);
  for (int g = 0; g < 4; ++g) EXPECT_TRUE(v0.holds(g) || v1.holds(g));
}

TEST(Reconstruct, Examples) {
  auto d = slots(1, 2, 3, 4);
  EXPECT_EQ(copa::reconstruct(copa::view_of(d, 0), copa::view_of(d, 1)), RingElement(10));
  DealtSecret w{{RingElement(~copa::u128(0)), RingElement(1), RingElement(0), RingElement(0)}};
  EXPECT_EQ(copa::reconstruct(copa::view_of(w, 2), copa::view_of(w, 3)), RingElement(0));
}

TEST(Reconstruct, RejectsInconsistentOverlap) {
  auto d = slots(1, 2, 3, 4);
  auto v0 = copa::view_of(d, 0), v1 = copa::view_of(d, 1);
  v1.set(2, RingElement(99));
  EXPECT_THROW(copa::reconstruct(v0, v1), ShareError);
}

TEST(Reconstruct, RejectsSameParty) {
  auto d = slots(1, 2, 3, 4);
  EXPECT_THROW(copa::reconstruct(copa::view_of(d, 2), copa::view_of(d, 2)), ShareError);
}

TEST(Reconstruct, AllPairsAgree) {
  std::mt19937_64 g(8);
  copa::SeededRandomness rng(9);
  for (int i = 0; i < 500; ++i) {
    const auto s = copa::testing::random_ring(g);
    const auto d = copa::deal(s, rng);
    for (int p = 0; p < 4; ++p)
      for (int q = p + 1; q < 4; ++q) ASSERT_EQ(copa::reconstruct(copa::view_of(d, p), copa::view_of(d, q)), s);
  }
}

// Any three slots are consistent with every candidate secret: solve for the missing slot.
TEST(Privacy, ThreeSlotsAdmitAnySecret) {
  std::mt19937_64 g(10);
  copa::SeededRandomness rng(12);
  for (int i = 0; i < 1000; ++i) {
    const auto d = copa::deal(copa::testing::random_ring(g), rng);
    const int p = i % 4;
    const auto view = copa::view_of(d, p);
    const auto candidate = copa::testing::random_ring(g);
    RingElement known;
    for (int s : copa::held_slots(p)) known += view.at(s);
    DealtSecret alt = d;
    alt.slots[p] = candidate - known;
    EXPECT_EQ(alt.secret(), candidate);
    EXPECT_EQ(copa::view_of(alt, p), view);
  }
}

TEST(ShareRecord, StoreLoad) {
  auto d = slots(1, 2, 3, 4);
  std::array<std::uint8_t, 48> rec{};
  copa::view_of(d, 1).store(rec);
  EXPECT_EQ(rec[0], 1);
  EXPECT_EQ(rec[16], 3);
  EXPECT_EQ(rec[32], 4);
  EXPECT_EQ(copa::ReplicatedShareView::load(1, rec), copa::view_of(d, 1));
}

TEST(Keys, AllocationInvariant) {
  auto system = copa::fresh_system_keys();
  auto km = copa::allocate_keys(system);
  for (int g = 0; g < 4; ++g) {
    int holders = 0;
    for (int p = 0; p < 4; ++p) {
      if (km[p].holds(g)) {
        ++holders;
        EXPECT_EQ(km[p].key(g), system[g]);
      }
    }
    EXPECT_EQ(holders, 3);
    EXPECT_FALSE(km[g].holds(g));
  }
}

TEST(Keys, FileRoundTripAndValidation) {
  auto km = copa::allocate_keys(copa::fresh_system_keys());
  for (int p = 0; p < 4; ++p) {
    auto bytes = copa::encode_key_file(km[p]);
    EXPECT_EQ(bytes.size(), 3u * 17u);
    auto back = copa::decode_key_file(p, bytes);
    for (int g : copa::held_slots(p)) EXPECT_EQ(back.key(g), km[p].key(g));
  }
  auto bytes = copa::encode_key_file(km[0]);
  EXPECT_THROW(copa::decode_key_file(1, bytes), ShareError);  // contains K_1
  EXPECT_THROW(copa::decode_key_file(0, std::span(bytes).first(34)), ShareError);
  EXPECT_THROW(copa::decode_key_file(0, std::span(bytes).first(20)), ShareError);
  auto dup = bytes;
  dup[17] = dup[0];
  EXPECT_THROW(copa::decode_key_file(0, dup), ShareError);
}

}  // namespace
