#include <gtest/gtest.h>

#include <chrono>
#include <future>
#include <random>

#include "cluster_util.hpp"
#include "copa_mpc/launcher.hpp"

using namespace copa;
using copa::testing::make_cmd;
using copa::testing::small_options;
using copa::testing::test_keys;

namespace {

std::vector<std::uint8_t> bytes_of(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::vector<std::uint8_t> v(n);
  for (auto& b : v) b = static_cast<std::uint8_t>(g());
  return v;
}

}  // namespace

TEST(LinkModel, OneMebibyteTransferTime) {
  const LinkModel m{100.0, 1.0};
  EXPECT_NEAR(m.transfer_time_us(1 << 20), 84.886, 1e-3);
  EXPECT_DOUBLE_EQ(m.transfer_time_us(0), 1.0);
  EXPECT_THROW((LinkModel{0.0, 1.0}.validate()), std::invalid_argument);
  EXPECT_THROW((LinkModel{10.0, -1.0}.validate()), std::invalid_argument);
}

TEST(SimFabric, PutLandsAfterModeledTransferTime) {
  SimCluster cl(test_keys(), small_options(1, 4, 4 << 20));
  const auto data = bytes_of(1 << 20, 1);
  cl.node(0).put(1, 0, data);
  cl.run();
  EXPECT_EQ(cl.node(1).read_local(0, data.size()), data);
  EXPECT_NEAR(cl.runtime().now_us(), LinkModel{}.transfer_time_us((1 << 20) + kHeaderBytes), 1e-9);
  const auto c = cl.node(0).counters();
  EXPECT_EQ(c.out[1].payload_bytes, 1u << 20);
  EXPECT_EQ(c.out[1].total_bytes, (1u << 20) + kHeaderBytes);
  EXPECT_EQ(cl.node(1).counters().in[0], c.out[1]);
}

TEST(SimFabric, FramesOnOneLinkArriveInSendOrder) {
  SimRuntime rt;
  SimFabric fab(rt, LinkModel{10.0, 2.0});
  std::vector<std::uint64_t> seen;
  for (int p = 0; p < kParties; ++p) fab.attach(p, rt, [&seen](WireMessage&& m) { seen.push_back(m.offset); });
  std::mt19937_64 g(2);
  for (std::uint64_t i = 0; i < 200; ++i) {
    WireMessage m;
    m.type = MessageType::kPut;
    m.src = 0;
    m.dst = 2;
    m.offset = i;
    m.payload.assign(g() % 5000, 0);  // large frames first would overtake small ones on a non-FIFO link
    m.payload_len = static_cast<std::uint32_t>(m.payload.size());
    fab.send(std::move(m));
  }
  rt.run();
  ASSERT_EQ(seen.size(), 200u);
  for (std::uint64_t i = 0; i < 200; ++i) EXPECT_EQ(seen[i], i);
}

TEST(SimFabric, BackToBackFramesSerialiseOnTheLink) {
  SimRuntime rt;
  const LinkModel lm{10.0, 5.0};
  SimFabric fab(rt, lm);
  std::vector<double> arrivals;
  for (int p = 0; p < kParties; ++p) fab.attach(p, rt, [&](WireMessage&&) { arrivals.push_back(rt.now_us()); });
  for (int i = 0; i < 3; ++i) {
    WireMessage m;
    m.type = MessageType::kPut;
    m.src = 3;
    m.dst = 1;
    m.payload.assign(968, 0);
    m.payload_len = 968;
    fab.send(std::move(m));
  }
  rt.run();
  const double tx = lm.serialization_us(1000);
  ASSERT_EQ(arrivals.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(arrivals[i], (i + 1) * tx + 5.0, 1e-9);
  EXPECT_NEAR(fab.busy_time_us(3, 1), 3 * tx, 1e-9);
}

TEST(SimFabric, RejectsForeignRuntimeAndBadParty) {
  SimRuntime rt, other;
  SimFabric fab(rt);
  EXPECT_THROW(fab.attach(0, other, [](WireMessage&&) {}), FabricError);
  WireMessage m;
  m.src = 0;
  m.dst = 4;
  EXPECT_THROW(fab.send(m), FabricError);
}

TEST(Fabric, GetRoundTrip) {
  SimCluster cl(test_keys(), small_options());
  const auto data = bytes_of(4096, 3);
  cl.node(2).write_local(8192, data);
  const auto t0 = cl.runtime().now_us();
  EXPECT_EQ(cl.node(0).get(2, 8192, 4096), data);
  // Header-only request out, one data frame back.
  const LinkModel lm;
  EXPECT_NEAR(cl.runtime().now_us() - t0, lm.transfer_time_us(kHeaderBytes) + lm.transfer_time_us(4096 + kHeaderBytes), 1e-9);
  EXPECT_EQ(cl.node(0).get(0, 8192, 16), cl.node(0).read_local(8192, 16));
}

TEST(Fabric, GetOfUnregisteredRangeFails) {
  SimCluster cl(test_keys(), small_options());
  EXPECT_THROW(cl.node(0).get(1, (1 << 20) - 8, 16), NodeError);
  EXPECT_THROW(cl.node(0).get(0, 1 << 20, 1), NodeError);
  EXPECT_EQ(cl.node(0).fabric().pending_gets(), 0u);
}

TEST(Fabric, PutOutsideRegisteredMemoryIsRefused) {
  SimCluster cl(test_keys(), small_options());
  cl.node(0).put(3, (1 << 20) - 4, bytes_of(16, 4), 77);
  cl.run();
  const auto ab = cl.node(0).aborts();
  ASSERT_EQ(ab.size(), 1u);
  EXPECT_EQ(ab[0].from, 3);
  EXPECT_EQ(ab[0].batch_id, 77u);
  EXPECT_EQ(ab[0].info.reason, AbortReason::kUnregisteredRange);
}

TEST(Fabric, TriggeredAddRunsOnTheRemoteEngine) {
  SimCluster cl(test_keys(), small_options());
  const auto a = bytes_of(48 * 10, 5), b = bytes_of(48 * 10, 6);
  cl.node(2).write_local(0, a);
  cl.node(2).write_local(4800, b);
  const auto local_ticket = cl.node(2).submit(make_cmd(Opcode::kAdd, 2, 0, 4800, 700000, 10));
  const auto job = cl.node(0).trigger(2, make_cmd(Opcode::kAdd, 2, 0, 4800, 768 << 10, 10));
  const auto ack = cl.node(0).wait_ack(job);
  EXPECT_EQ(ack.status, kCompletionAccepted);
  EXPECT_NE(ack.ticket, local_ticket);
  const auto fin = cl.node(0).wait_remote(job);
  EXPECT_EQ(fin.status, static_cast<std::uint8_t>(CompletionStatus::kOk));
  EXPECT_EQ(fin.ticket, ack.ticket);
  EXPECT_EQ(fin.opcode, static_cast<std::uint8_t>(Opcode::kAdd));
  EXPECT_TRUE(cl.node(2).wait(local_ticket).ok());
  EXPECT_EQ(cl.node(2).read_local(768 << 10, 480), cl.node(2).read_local(700000, 480));
  EXPECT_EQ(cl.node(2).triggers_sent(), 0u);
  EXPECT_EQ(cl.node(0).triggers_sent(), 1u);
}

TEST(Fabric, InvalidTriggerIsRejectedWithErrorStatus) {
  SimCluster cl(test_keys(), small_options());
  const auto job = cl.node(0).trigger(1, make_cmd(Opcode::kAdd, 1, 0, 0, (1 << 20) - 10, 10));
  const auto ack = cl.node(0).wait_ack(job);
  EXPECT_EQ(ack.status, static_cast<std::uint8_t>(CompletionStatus::kError));
  EXPECT_EQ(cl.node(0).wait_remote(job).status, static_cast<std::uint8_t>(CompletionStatus::kError));
  EXPECT_EQ(cl.node(1).engine().dispatch_log().size(), 0u);
}

TEST(Saturation, MinAccelsExamples) {
  EXPECT_EQ(min_accels(100, 17.6), 6);
  EXPECT_EQ(min_accels(100, 26.4), 4);
  EXPECT_EQ(min_accels(17.6, 17.6), 1);
  EXPECT_EQ(min_accels(10, 17.6), 1);
  EXPECT_EQ(min_accels(100, 25), 4);
  EXPECT_EQ(min_accels(100, 24.99), 5);
  EXPECT_THROW(min_accels(0, 1), std::invalid_argument);
  EXPECT_THROW(min_accels(1, 0), std::invalid_argument);
  EXPECT_DOUBLE_EQ(offered_load_gbps(3, 17.6, 100), 3 * 17.6);
  EXPECT_DOUBLE_EQ(offered_load_gbps(6, 17.6, 100), 100);
}

TEST(Accounting, PayloadBytesPerDirectedLink) {
  for (const std::uint64_t n : {1ull, 7ull, 300ull}) {
    for (auto mode : {ModeFlags{false, true, false}, ModeFlags{true, true, false}, ModeFlags{true, true, true}}) {
      BenchOptions opt;
      opt.batch = n;
      opt.mode = mode;
      opt.seed = 3;
      const auto r = run_sim_bench(opt);
      ASSERT_TRUE(r.ok());
      const std::uint64_t per_link = mode.malicious ? (mode.batched_hash ? 16 * n + 32 : 24 * n) : 16 * n;
      for (int s = 0; s < kParties; ++s) {
        EXPECT_EQ(r.metrics.parties[s].total_out().payload_bytes, 3 * per_link);
        for (int d = 0; d < kParties; ++d) {
          if (s == d) continue;
          const auto& l = r.metrics.link(s, d);
          EXPECT_EQ(l.payload_bytes, per_link) << s << "->" << d;
          EXPECT_EQ(l.tag_bytes, per_link - 16 * n);
          EXPECT_EQ(l.total_bytes, l.payload_bytes + kHeaderBytes * l.messages);
        }
      }
    }
  }
}

TEST(SocketTransport, ParseEndpoint) {
  EXPECT_EQ(parse_endpoint("127.0.0.1:9000"), (Endpoint{"127.0.0.1", 9000}));
  EXPECT_THROW(parse_endpoint("nohost"), std::exception);
  EXPECT_THROW(parse_endpoint("h:0"), std::exception);
  EXPECT_THROW(parse_endpoint("h:70000"), std::exception);
}

TEST(SocketTransport, FourNodesInProcess) {
  const auto ports = pick_free_ports();
  const auto keys = test_keys();
  std::array<PartyConfig, kParties> cfgs;
  for (int p = 0; p < kParties; ++p) {
    cfgs[p].party_id = p;
    for (int q = 0; q < kParties; ++q) cfgs[p].peers[q] = Endpoint{"127.0.0.1", ports[q]};
    cfgs[p].memory_size = 1 << 20;
  }
  const auto start = std::chrono::steady_clock::now();
  std::array<std::future<std::unique_ptr<SocketNode>>, kParties> f;
  for (int p = 0; p < kParties; ++p)
    f[p] = std::async(std::launch::async, [&, p] { return std::make_unique<SocketNode>(cfgs[p], keys[p], 10.0); });
  std::array<std::unique_ptr<SocketNode>, kParties> nodes;
  for (int p = 0; p < kParties; ++p) nodes[p] = f[p].get();
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 1.0);

  // Successive PUTs to one offset; a later GET on the same link sees the last.
  auto& n0 = nodes[0]->node();
  for (std::uint8_t i = 1; i <= 100; ++i) n0.put(1, 64, std::vector<std::uint8_t>(4096, i));
  EXPECT_EQ(n0.get(1, 64, 4096), std::vector<std::uint8_t>(4096, 100));

  const auto data = bytes_of(48 * 5, 9);
  n0.put(3, 0, data);
  n0.put(3, 240, data);
  const auto job = n0.trigger(3, make_cmd(Opcode::kAdd, 3, 0, 240, 768 << 10, 5));
  EXPECT_EQ(n0.wait_ack(job, 10).status, kCompletionAccepted);
  EXPECT_EQ(n0.wait_remote(job, 10).status, static_cast<std::uint8_t>(CompletionStatus::kOk));
  EXPECT_EQ(n0.counters().out[3].payload_bytes, 2u * data.size());

  nodes[1].reset();
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(5);
  while (!nodes[0]->transport().peer_closed() && std::chrono::steady_clock::now() < deadline)
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  EXPECT_TRUE(nodes[0]->transport().peer_closed());
}
