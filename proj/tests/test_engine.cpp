#include <gtest/gtest.h>

#include <random>

#include "cluster_util.hpp"
#include "copa_mpc/engine.hpp"
#include "test_util.hpp"

using namespace copa;
using copa::testing::make_cmd;
using copa::testing::random_ring;
using copa::testing::reconstruct_all;
using copa::testing::small_options;
using copa::testing::test_keys;

namespace {

constexpr std::uint64_t kIn = 0;
constexpr std::uint64_t kOut = 768 << 10;  // output segment of a 1 MiB region

void deal_vector(SimCluster& cl, const std::vector<RingElement>& v, std::uint64_t off, std::uint64_t seed) {
  SeededRandomness r(seed);
  cl.node(0).deal_inputs(v, off, r);
  cl.run();
}

std::vector<RingElement> random_vec(std::size_t n, std::mt19937_64& g) {
  std::vector<RingElement> v(n);
  for (auto& e : v) e = random_ring(g);
  return v;
}

}  // namespace

TEST(Engine, TicketsAreConsecutive) {
  SimCluster cl(test_keys(), small_options());
  const auto t = cl.node(0).submit(make_cmd(Opcode::kAdd, 0, 0, 48, kOut, 1));
  const auto u = cl.node(0).submit(make_cmd(Opcode::kAdd, 0, 0, 48, kOut + 48, 1));
  EXPECT_EQ(u, t + 1);
}

TEST(Engine, OutOfBoundsRejectedAndNothingQueued) {
  SimCluster cl(test_keys(), small_options());
  auto& eng = cl.node(0).engine();
  const std::uint64_t size = 1 << 20;
  const std::uint32_t n = 10;
  EXPECT_THROW(cl.node(0).submit(make_cmd(Opcode::kAdd, 0, size - 48 * n + 1, 0, kOut, n)), CommandError);
  EXPECT_THROW(cl.node(0).submit(make_cmd(Opcode::kAdd, 0, 0, 0, size - 1, n)), CommandError);
  EXPECT_EQ(eng.queued(), 0u);
  EXPECT_EQ(eng.last_ticket(), 0u);
  // exactly at the edge is fine
  EXPECT_NO_THROW(cl.node(0).submit(make_cmd(Opcode::kAdd, 0, size - 48 * n, 0, kOut, n)));
}

TEST(Engine, MalformedCommandsRejected) {
  SimCluster cl(test_keys(), small_options());
  auto c = make_cmd(Opcode::kAdd, 0, 0, 48, kOut, 0);
  EXPECT_THROW(cl.node(0).submit(c), CommandError);
  c = make_cmd(Opcode::kAdd, 0, 0, 48, kOut, 1);
  c.opcode = static_cast<Opcode>(7);
  EXPECT_THROW(cl.node(0).submit(c), CommandError);
  c = make_cmd(Opcode::kAdd, 0, 0, 48, kOut, 1);
  c.flags = 0x08;
  EXPECT_THROW(cl.node(0).submit(c), CommandError);
  c = make_cmd(Opcode::kAdd, 0, 0, 48, kOut, 1);
  c.batch_id = kReservedBatchBit | 1;
  EXPECT_THROW(cl.node(0).submit(c), CommandError);
  c = make_cmd(Opcode::kAdd, 0, 0, 48, kOut, 1);
  c.src_party = 4;
  EXPECT_THROW(cl.node(0).submit(c), CommandError);
  c = make_cmd(Opcode::kMulFused, 0, 0, 48, kOut, 4);
  c.ctr_base = ~std::uint64_t(0) - 16;
  EXPECT_THROW(cl.node(0).submit(c), CommandError);
  // fused batches must fit a region slot (1 MiB / 4 segments / 4 slots)
  c = make_cmd(Opcode::kMulFused, 0, 0, 0, kOut, 1000);
  EXPECT_THROW(cl.node(0).submit(c), CommandError);
}

TEST(Engine, FirstIdleInstanceChosen) {
  SimCluster cl(test_keys(), small_options(4));
  auto& n0 = cl.node(0);
  const auto t = n0.submit(make_cmd(Opcode::kAdd, 0, 0, 48, kOut, 1));
  n0.wait(t);
  const auto u = n0.submit(make_cmd(Opcode::kAdd, 0, 0, 48, kOut, 1));
  n0.wait(u);
  const auto& log = n0.engine().dispatch_log();
  ASSERT_EQ(log.size(), 2u);
  EXPECT_EQ(log[0].instance, 0);
  EXPECT_EQ(log[1].instance, 0);  // instance 0 was idle again
}

TEST(Engine, SingleInstanceRunsSerially) {
  SimCluster cl(test_keys(), small_options(1));
  auto& n0 = cl.node(0);
  std::vector<std::uint64_t> t;
  for (int i = 0; i < 3; ++i) t.push_back(n0.submit(make_cmd(Opcode::kAdd, 0, 0, 48 * 100, kOut + 4800 * i, 100)));
  for (auto x : t) n0.wait(x);
  const auto& log = n0.engine().dispatch_log();
  ASSERT_EQ(log.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(log[i].ticket, t[i]);
  for (int i = 1; i < 3; ++i) EXPECT_GE(log[i].started_us, log[i - 1].finished_us);
}

TEST(Engine, FourInstancesRunDisjointCommandsConcurrently) {
  SimCluster cl(test_keys(), small_options(4));
  auto& n0 = cl.node(0);
  std::vector<std::uint64_t> t;
  for (int i = 0; i < 4; ++i) t.push_back(n0.submit(make_cmd(Opcode::kAdd, 0, 4800 * i, 20000 + 4800 * i, kOut + 4800 * i, 100)));
  for (auto x : t) n0.wait(x);
  const auto& log = n0.engine().dispatch_log();
  ASSERT_EQ(log.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    EXPECT_EQ(log[i].instance, i);
    EXPECT_DOUBLE_EQ(log[i].started_us, log[0].started_us);
  }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_LT(log[i].started_us, log[j].finished_us);
}

TEST(Engine, OverlappingDestinationsSerialize) {
  SimCluster cl(test_keys(), small_options(4));
  auto& n0 = cl.node(0);
  const auto a = n0.submit(make_cmd(Opcode::kAdd, 0, 0, 4800, kOut, 100));
  const auto b = n0.submit(make_cmd(Opcode::kAdd, 0, 9600, 14400, kOut + 48 * 50, 100));
  n0.wait(a);
  n0.wait(b);
  const auto& log = n0.engine().dispatch_log();
  ASSERT_EQ(log.size(), 2u);
  EXPECT_GE(log[1].started_us, log[0].finished_us);
}

TEST(Engine, RandomCommandsNeverOverlapConflictingRanges) {
  std::mt19937_64 g(21);
  SimCluster cl(test_keys(), small_options(3));
  auto& n0 = cl.node(0);
  struct Sub {
    std::uint64_t ticket;
    std::vector<ByteRange> ranges;
  };
  std::vector<Sub> subs;
  for (int i = 0; i < 200; ++i) {
    const std::uint32_t n = 1 + g() % 40;
    auto pick = [&] { return 48 * (g() % 200); };
    const auto c = make_cmd(Opcode::kAdd, 0, pick(), pick(), kOut + pick(), n);
    subs.push_back({n0.submit(c), {{c.src_a, 48ull * n}, {c.src_b, 48ull * n}, {c.dst, 48ull * n}}});
  }
  cl.run();
  std::map<std::uint64_t, DispatchRecord> by_ticket;
  for (const auto& d : n0.engine().dispatch_log()) by_ticket[d.ticket] = d;
  ASSERT_EQ(by_ticket.size(), subs.size());
  for (std::size_t i = 0; i < subs.size(); ++i) {
    ASSERT_NE(n0.engine().completion(subs[i].ticket), nullptr);
    for (std::size_t j = i + 1; j < subs.size(); ++j) {
      bool conflict = false;
      for (const auto& a : subs[i].ranges)
        for (const auto& b : subs[j].ranges) conflict |= a.overlaps(b);
      if (!conflict) continue;
      const auto& x = by_ticket[subs[i].ticket];
      const auto& y = by_ticket[subs[j].ticket];
      EXPECT_TRUE(x.finished_us <= y.started_us || y.finished_us <= x.started_us) << i << " vs " << j;
    }
  }
}

TEST(Engine, AddZeroIsIdentityAndEmitsNothing) {
  std::mt19937_64 g(3);
  SimCluster cl(test_keys(), small_options());
  const std::size_t n = 50;
  const auto x = random_vec(n, g);
  // kIn stays all-zero records: the literal zero share.
  deal_vector(cl, x, kIn + 48 * n, 2);
  const auto before = cl.metrics(0);
  for (int p = 0; p < 4; ++p) cl.node(p).wait(cl.node(p).submit(make_cmd(Opcode::kAdd, p, kIn, kIn + 48 * n, kOut, n)));
  cl.run();
  const auto after = cl.metrics(0);
  for (int p = 0; p < 4; ++p) {
    EXPECT_EQ(cl.node(p).read_local(kOut, 48 * n), cl.node(p).read_local(kIn + 48 * n, 48 * n));
    EXPECT_EQ(after.parties[p].total_out(), before.parties[p].total_out());
    EXPECT_EQ(after.parties[p].total_in(), before.parties[p].total_in());
  }
}

TEST(Engine, AddMatchesPlaintextOracle) {
  std::mt19937_64 g(4);
  const std::size_t n = 10000;
  SimCluster cl(test_keys(), small_options(1, 4, 4 << 20));
  const auto x = random_vec(n, g), y = random_vec(n, g);
  deal_vector(cl, x, 0, 5);
  deal_vector(cl, y, 48 * n, 6);
  const std::uint64_t out = 3 << 20;
  for (int p = 0; p < 4; ++p) {
    const auto ev = cl.node(p).wait(cl.node(p).submit(make_cmd(Opcode::kAdd, p, 0, 48 * n, out, n)));
    EXPECT_TRUE(ev.ok());
    EXPECT_EQ(ev.counters.payload_out, 0u);
  }
  bool consistent = false;
  const auto z = reconstruct_all(cl, out, n, &consistent);
  EXPECT_TRUE(consistent);
  for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(z[i], x[i] + y[i]) << i;
}

TEST(Engine, FusedHandExample) {
  SimCluster cl(test_keys(), small_options());
  deal_vector(cl, {RingElement(5)}, 0, 7);
  deal_vector(cl, {RingElement(3)}, 48, 8);
  for (int p = 0; p < 4; ++p) cl.node(p).submit(make_cmd(Opcode::kMulFused, p, 0, 48, kOut, 1));
  for (int p = 0; p < 4; ++p) EXPECT_TRUE(cl.node(p).wait(1).ok());
  bool consistent = false;
  EXPECT_EQ(reconstruct_all(cl, kOut, 1, &consistent)[0], RingElement(15));
  EXPECT_TRUE(consistent);
}

TEST(Engine, FusedMatchesPlaintextOracleInAllModes) {
  for (auto mode : {ModeFlags{false, true, false}, ModeFlags{true, true, false}, ModeFlags{true, true, true}, ModeFlags{false, false, false}}) {
    std::mt19937_64 g(8);
    const std::size_t n = 10000;
    SimCluster cl(test_keys(), small_options(1, 1, 8 << 20));
    const auto x = random_vec(n, g), y = random_vec(n, g);
    deal_vector(cl, x, 0, 9);
    deal_vector(cl, y, 48 * n, 10);
    const std::uint64_t out = 6 << 20;
    for (int p = 0; p < 4; ++p) cl.node(p).submit(make_cmd(Opcode::kMulFused, p, 0, 48 * n, out, n, mode, 77, 1000));
    for (int p = 0; p < 4; ++p) ASSERT_TRUE(cl.node(p).wait(1).ok()) << int(mode.bits());
    bool consistent = false;
    const auto z = reconstruct_all(cl, out, n, &consistent);
    EXPECT_TRUE(consistent);
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(z[i], x[i] * y[i]) << i;
  }
}

TEST(Engine, SimulatedJobTime) {
  AccelCostModel m;
  EXPECT_NEAR(m.job_time_us(1024), 1 + 1024 * 2.0 / 275, 1e-12);
  EXPECT_NEAR(m.job_time_us(1024), 8.447, 5e-4);
  SimCluster cl(test_keys(), small_options(1, 1, 1 << 20));
  for (int p = 0; p < 4; ++p) cl.node(p).submit(make_cmd(Opcode::kMulFused, p, 0, 48 * 1024, kOut, 1024));
  for (int p = 0; p < 4; ++p) EXPECT_NEAR(cl.node(p).wait(1).simulated_time_us, 8.447, 5e-4);
}

TEST(Engine, ModeledRateIncreasesTowardClockLimit) {
  AccelCostModel m;
  double prev = 0;
  for (std::uint64_t n = 1; n <= (1u << 24); n *= 2) {
    const double r = m.ops_per_second(n);
    EXPECT_GT(r, prev);
    EXPECT_LT(r, 275e6 / 2);
    prev = r;
  }
  EXPECT_GT(prev, 0.999 * 275e6 / 2);
}

TEST(Engine, PerLinkRate) {
  AccelCostModel m;
  EXPECT_NEAR(per_link_rate(m, false), 17.6, 1e-9);
  EXPECT_NEAR(per_link_rate(m, true), 26.4, 1e-9);
  m.clock_mhz = 250;
  EXPECT_NEAR(per_link_rate(m, false), 16.0, 1e-9);
}

// Stage 1, a hand-routed exchange, then stage 2 must equal the fused command.
TEST(Engine, FusedEqualsStagedPipeline) {
  for (auto mode : {ModeFlags{false, true, false}, ModeFlags{true, true, false}, ModeFlags{true, true, true}}) {
    std::mt19937_64 g(12);
    const std::uint32_t n = 64;
    const auto x = random_vec(n, g), y = random_vec(n, g);
    const std::uint64_t scratch = 400 << 10, ingress = 200 << 10, staged_out = kOut + 48 * n;

    SimCluster cl(test_keys(), small_options());
    deal_vector(cl, x, 0, 13);
    deal_vector(cl, y, 48 * n, 14);
    for (int p = 0; p < 4; ++p) cl.node(p).submit(make_cmd(Opcode::kMulFused, p, 0, 48 * n, kOut, n, mode, 5, 320));
    for (int p = 0; p < 4; ++p) ASSERT_TRUE(cl.node(p).wait(1).ok());

    for (int p = 0; p < 4; ++p) ASSERT_TRUE(cl.node(p).wait(cl.node(p).submit(make_cmd(Opcode::kMulStage1, p, 0, 48 * n, scratch, n, mode, 5, 320))).ok());
    const std::uint64_t vb = mode.per_term_tags() ? 8ull * n : 32;
    std::array<std::vector<std::uint8_t>, 4> ingress_blocks;
    for (auto& b : ingress_blocks) b.assign(ingress_bytes(mode, n), 0);
    for (int s = 0; s < 4; ++s) {
      const auto block = cl.node(s).read_local(scratch, stage1_bytes(mode, n));
      for (int k = 0; k < 3; ++k) {
        const auto r = kernels::egress_route(s, k);
        std::copy_n(block.begin() + 48 * n + 16 * n * k, 16 * n, ingress_blocks[r.receiver].begin() + 16 * n * r.ingress_block);
        if (mode.malicious) {
          const auto v = kernels::verifier_route(s, k);
          std::copy_n(block.begin() + 96 * n + vb * k, vb, ingress_blocks[v.receiver].begin() + 48 * n + vb * v.ingress_block);
        }
      }
    }
    for (int p = 0; p < 4; ++p) {
      cl.node(p).write_local(ingress, ingress_blocks[p]);
      ASSERT_TRUE(cl.node(p).wait(cl.node(p).submit(make_cmd(Opcode::kMulStage2, p, scratch, ingress, staged_out, n, mode, 5, 320))).ok());
      EXPECT_EQ(cl.node(p).read_local(staged_out, 48 * n), cl.node(p).read_local(kOut, 48 * n));
    }
  }
}

TEST(Engine, RandomCommandsStayInsideDeclaredRanges) {
  std::mt19937_64 g(31);
  SimCluster cl(test_keys(), small_options(2));
  auto& n0 = cl.node(0);
  std::vector<std::uint8_t> pattern(1 << 20);
  for (auto& b : pattern) b = static_cast<std::uint8_t>(g());
  n0.write_local(0, pattern);
  std::uint64_t accepted = 0, fast_failed = 0;
  for (int i = 0; i < 300; ++i) {
    const auto op = static_cast<Opcode>(1 + g() % 3);  // local-only opcodes
    ModeFlags mode = ModeFlags::from_bits(static_cast<std::uint8_t>(g() % 8));
    const std::uint32_t n = 1 + g() % 64;
    auto c = make_cmd(op, 0, g() % (1 << 20), g() % (1 << 20), g() % (1 << 20), n, mode, 1 + g() % 1000, g() % 100000);
    std::uint64_t t = 0;
    try {
      t = n0.submit(c);
    } catch (const CommandError&) {
      continue;
    }
    ++accepted;
    const auto ev = n0.wait(t);
    EXPECT_NE(ev.status, CompletionStatus::kError) << ev.message;
    // Commands on a batch poisoned by an earlier abort fail without dispatch.
    if (ev.status == CompletionStatus::kAbort && n0.engine().dispatch_log().back().ticket != t) ++fast_failed;
    const auto now = n0.read_local(0, 1 << 20);
    const auto fp = footprint(c);
    for (std::size_t b = 0; b < now.size(); ++b) {
      if (b >= c.dst && b < c.dst + fp.dst) continue;
      if (now[b] != pattern[b]) {
        ADD_FAILURE() << "byte " << b << " changed outside dst by " << opcode_name(c.opcode);
        break;
      }
    }
    pattern = now;
  }
  EXPECT_GT(accepted, 100u);
  EXPECT_EQ(n0.engine().dispatch_log().size() + fast_failed, accepted);
}

TEST(Engine, RemoteSourceFetchedAndRemoteDestinationWritten) {
  std::mt19937_64 g(41);
  SimCluster cl(test_keys(), small_options());
  const std::uint32_t n = 20;
  // Party 0's share records are parked in party 1's memory.
  std::vector<std::uint8_t> a(48 * n), b(48 * n);
  for (auto& v : a) v = static_cast<std::uint8_t>(g());
  for (auto& v : b) v = static_cast<std::uint8_t>(g());
  cl.node(1).write_local(1000, a);
  cl.node(1).write_local(1000 + 48 * n, b);
  auto c = make_cmd(Opcode::kAdd, 0, 1000, 1000 + 48 * n, kOut, n);
  c.src_party = 1;
  c.dst_party = 2;
  const auto ev = cl.node(0).wait(cl.node(0).submit(c));
  ASSERT_TRUE(ev.ok()) << ev.message;
  cl.run();
  std::vector<std::uint8_t> want(48 * n);
  kernels::add_batch(0, a, b, want, n);
  EXPECT_EQ(cl.node(2).read_local(kOut, 48 * n), want);
  EXPECT_EQ(cl.node(0).fabric().messages_sent(MessageType::kGet), 2u);
}

TEST(Engine, RemoteFetchOfUnregisteredRangeFails) {
  SimCluster cl(test_keys(), small_options());
  cl.node(1).memory().clear_registrations();
  auto c = make_cmd(Opcode::kAdd, 0, 0, 48, kOut, 1);
  c.src_party = 1;
  const auto ev = cl.node(0).wait(cl.node(0).submit(c));
  EXPECT_EQ(ev.status, CompletionStatus::kError);
}

TEST(Engine, EveryAcceptedCommandCompletesOnce) {
  SimCluster cl(test_keys(), small_options(2));
  std::vector<std::uint64_t> t;
  for (int i = 0; i < 20; ++i) t.push_back(cl.node(0).submit(make_cmd(Opcode::kAdd, 0, 48 * i, 48 * (i + 1), kOut + 48 * (i % 3), 1)));
  cl.run();
  for (auto x : t) {
    const auto* ev = cl.node(0).engine().completion(x);
    ASSERT_NE(ev, nullptr);
    EXPECT_EQ(ev->ticket, x);
  }
  EXPECT_EQ(cl.node(0).engine().dispatch_log().size(), t.size());
  EXPECT_EQ(cl.node(0).engine().running(), 0u);
  EXPECT_EQ(cl.node(0).engine().queued(), 0u);
}
