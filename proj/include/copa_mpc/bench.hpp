#pragma once

// Benchmark harness: dealt-random multiply batches over the simulated fabric
// or over sockets, oracle-checked before any row is reported, plus
// saturation arithmetic and CSV/JSON report writers.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "copa_mpc/cluster.hpp"
#include "copa_mpc/command.hpp"
#include "copa_mpc/link.hpp"

namespace copa {

class BenchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BenchRow {
  std::uint64_t batch = 0;
  std::string mode;  // base | malicious
  int accels = 1;
  double ops_per_s = 0;
  double per_link_gbps = 0;
  double total_gbps = 0;
  double time_us = 0;
  std::uint64_t aborts = 0;
  friend bool operator==(const BenchRow&, const BenchRow&) = default;
};

struct BenchOptions {
  std::uint64_t batch = 1024;
  ModeFlags mode;
  int accels = 1;
  std::optional<std::uint64_t> seed;  // unseeded runs draw from system entropy
  AccelCostModel cost;
  LinkModel link;
};

struct BenchResult {
  BenchRow row;
  std::uint64_t mismatches = 0;
  MetricsSnapshot metrics;  // counter deltas over the timed window
  std::vector<TraceEvent> timeline;
  std::vector<CompletionEvent> completions;
  bool ok() const { return mismatches == 0 && row.aborts == 0; }
};

inline std::string mode_name(ModeFlags m) { return m.malicious ? "malicious" : "base"; }

inline ModeFlags parse_mode(const std::string& s) {
  if (s == "base") return {false, true, false};
  if (s == "malicious") return {true, true, false};
  throw BenchError("mode must be base or malicious, got '" + s + "'");
}

inline std::array<Key128, kParties> seeded_system_keys(std::uint64_t seed) {
  std::mt19937_64 g(seed ^ 0x6b657973ull);
  std::array<Key128, kParties> keys{};
  for (auto& k : keys)
    for (auto& b : k) b = static_cast<std::uint8_t>(g());
  return keys;
}

// Batch layout shared by both transports: x then y in the input segment,
// results at the start of the output segment, one fused command per chunk.
struct BatchPlan {
  std::uint64_t count = 0;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> chunks;  // (first element, length)
  std::uint64_t memory_size = 0;
  std::uint32_t batch_slots = 1;

  static BatchPlan make(std::uint64_t n, int accels, ModeFlags mode) {
    if (n == 0) throw BenchError("batch must be at least 1");
    if (accels < 1) throw BenchError("accels must be at least 1");
    BatchPlan p;
    p.count = n;
    const std::uint64_t parts = std::min<std::uint64_t>(n, static_cast<std::uint64_t>(accels));
    std::uint64_t at = 0;
    for (std::uint64_t c = 0; c < parts; ++c) {
      const std::uint64_t len = n / parts + (c < n % parts ? 1 : 0);
      p.chunks.push_back({at, len});
      at += len;
    }
    p.batch_slots = static_cast<std::uint32_t>(parts);
    auto up64 = [](std::uint64_t v) { return (v + 63) & ~std::uint64_t(63); };
    const std::uint64_t biggest = p.chunks.front().second;
    const std::uint64_t slot = up64(std::max(stage1_bytes(mode, biggest), ingress_bytes(mode, biggest)));
    const std::uint64_t segment = up64(std::max({2 * kShareRecordBytes * n, slot * parts, std::uint64_t{4096}}));
    p.memory_size = 4 * segment;
    return p;
  }

  LookasideCommand command(const RegionMap& rm, std::size_t chunk, PartyId src, PartyId dst, ModeFlags mode, std::uint64_t batch_base) const {
    const auto [first, len] = chunks.at(chunk);
    LookasideCommand c;
    c.opcode = Opcode::kMulFused;
    c.flags = mode.bits();
    c.src_party = static_cast<std::uint8_t>(src);
    c.dst_party = static_cast<std::uint8_t>(dst);
    c.count = static_cast<std::uint32_t>(len);
    c.batch_id = batch_base + chunk;
    c.src_a = rm.input().offset + kShareRecordBytes * first;
    c.src_b = rm.input().offset + kShareRecordBytes * (count + first);
    c.dst = rm.output().offset + kShareRecordBytes * first;
    c.ctr_base = 16 * first;
    return c;
  }

  std::uint64_t x_offset(const RegionMap& rm) const { return rm.input().offset; }
  std::uint64_t y_offset(const RegionMap& rm) const { return rm.input().offset + kShareRecordBytes * count; }
  std::uint64_t z_offset(const RegionMap& rm) const { return rm.output().offset; }
};

namespace detail {

struct Operands {
  std::vector<RingElement> x, y;
};

inline Operands random_operands(std::uint64_t n, std::optional<std::uint64_t> seed) {
  Operands o;
  o.x.resize(n);
  o.y.resize(n);
  if (seed) {
    SeededRandomness r(*seed);
    for (std::uint64_t i = 0; i < n; ++i) {
      o.x[i] = r.next_ring();
      o.y[i] = r.next_ring();
    }
  } else {
    SystemRandomness r;
    for (std::uint64_t i = 0; i < n; ++i) {
      o.x[i] = r.next_ring();
      o.y[i] = r.next_ring();
    }
  }
  return o;
}

// Counts products that fail to reconstruct, checking two disjoint pairs of views.
inline std::uint64_t check_products(const Operands& o, const std::array<std::vector<ReplicatedShareView>, kParties>& views) {
  std::uint64_t bad = 0;
  for (std::size_t i = 0; i < o.x.size(); ++i) {
    const RingElement want = o.x[i] * o.y[i];
    try {
      if (reconstruct(views[0][i], views[1][i]) != want || reconstruct(views[2][i], views[3][i]) != want) ++bad;
    } catch (const ShareError&) {
      ++bad;
    }
  }
  return bad;
}

inline MetricsSnapshot delta(const MetricsSnapshot& after, const MetricsSnapshot& before) {
  MetricsSnapshot d = after;
  for (int p = 0; p < kParties; ++p) {
    for (int q = 0; q < kParties; ++q) {
      auto sub = [](LinkCounters a, const LinkCounters& b) {
        a.payload_bytes -= b.payload_bytes;
        a.tag_bytes -= b.tag_bytes;
        a.total_bytes -= b.total_bytes;
        a.messages -= b.messages;
        return a;
      };
      d.parties[p].out[q] = sub(after.parties[p].out[q], before.parties[p].out[q]);
      d.parties[p].in[q] = sub(after.parties[p].in[q], before.parties[p].in[q]);
    }
    d.parties[p].ops_completed -= before.parties[p].ops_completed;
  }
  return d;
}

inline void fill_rates(BenchRow& row, const MetricsSnapshot& m, double elapsed_us) {
  row.time_us = elapsed_us;
  double total_bits = 0;
  for (int p = 0; p < kParties; ++p)
    for (int q = 0; q < kParties; ++q)
      if (p != q) total_bits += 8.0 * static_cast<double>(m.link(p, q).payload_bytes);
  const double links = kParties * (kParties - 1);
  row.ops_per_s = elapsed_us > 0 ? static_cast<double>(row.batch) / elapsed_us * 1e6 : 0;
  row.total_gbps = elapsed_us > 0 ? total_bits / elapsed_us / 1e3 : 0;
  row.per_link_gbps = row.total_gbps / links;
}

}  // namespace detail

// Four simulated parties; every party submits the fused commands locally.
inline BenchResult run_sim_bench(const BenchOptions& opt) {
  const auto plan = BatchPlan::make(opt.batch, opt.accels, opt.mode);
  const auto system_keys = opt.seed ? seeded_system_keys(*opt.seed) : fresh_system_keys();
  NodeOptions no;
  no.memory_size = plan.memory_size;
  no.batch_slots = plan.batch_slots;
  no.engine.num_accels = opt.accels;
  no.engine.cost = opt.cost;
  SimCluster cl(allocate_keys(system_keys), no, opt.link);
  const auto& rm = cl.node(0).regions();

  const auto ops = detail::random_operands(opt.batch, opt.seed);
  SeededRandomness dealer(opt.seed ? *opt.seed + 1 : std::random_device{}());
  cl.node(0).deal_inputs(ops.x, plan.x_offset(rm), dealer);
  cl.node(0).deal_inputs(ops.y, plan.y_offset(rm), dealer);
  cl.run();

  const double t0 = cl.runtime().now_us();
  const auto before = cl.metrics(0);
  std::array<std::vector<std::uint64_t>, kParties> tickets;
  for (int p = 0; p < kParties; ++p)
    for (std::size_t c = 0; c < plan.chunks.size(); ++c) tickets[p].push_back(cl.node(p).submit(plan.command(rm, c, p, p, opt.mode, 1)));

  BenchResult res;
  double last = t0;
  for (int p = 0; p < kParties; ++p)
    for (auto t : tickets[p]) {
      const auto ev = cl.node(p).wait(t);
      last = std::max(last, ev.finished_us);
      if (!ev.ok()) ++res.row.aborts;
      res.completions.push_back(ev);
    }
  cl.run();
  const double elapsed = last - t0;
  res.metrics = detail::delta(cl.metrics(elapsed), before);
  res.metrics.elapsed_us = elapsed;

  res.row.batch = opt.batch;
  res.row.mode = mode_name(opt.mode);
  res.row.accels = opt.accels;
  detail::fill_rates(res.row, res.metrics, elapsed);

  std::array<std::vector<ReplicatedShareView>, kParties> views;
  for (int p = 0; p < kParties; ++p) views[p] = cl.node(p).read_views(plan.z_offset(rm), opt.batch);
  res.mismatches = detail::check_products(ops, views);
  res.timeline = cl.runtime().timeline();
  return res;
}

inline std::vector<BenchResult> run_sim_sweep(const std::vector<std::uint64_t>& batches, BenchOptions opt) {
  std::vector<BenchResult> out;
  for (auto b : batches) {
    opt.batch = b;
    out.push_back(run_sim_bench(opt));
  }
  return out;
}

// Initiator side of a socket run: party 0 deals, triggers the fused command on
// the three headless peers, runs its own share, then fetches party 1's output
// and every other view to check the products.
inline BenchResult run_socket_initiator(SocketNode& sn, const BenchOptions& opt, const BatchPlan& plan) {
  PartyNode& node = sn.node();
  if (node.id() != 0) throw BenchError("the initiator must be party 0");
  const auto& rm = node.regions();
  const auto ops = detail::random_operands(opt.batch, opt.seed);
  SeededRandomness dealer(opt.seed ? *opt.seed + 1 : std::random_device{}());
  node.deal_inputs(ops.x, plan.x_offset(rm), dealer);
  node.deal_inputs(ops.y, plan.y_offset(rm), dealer);

  MetricsSnapshot before;
  before.parties[0] = node.counters();
  const double t0 = node.runtime().now_us();
  std::vector<PartyNode::RemoteJob> remote;
  for (std::size_t c = 0; c < plan.chunks.size(); ++c)
    for (int q = 1; q < kParties; ++q) remote.push_back(node.trigger(q, plan.command(rm, c, q, q, opt.mode, 1)));
  std::vector<std::uint64_t> local;
  for (std::size_t c = 0; c < plan.chunks.size(); ++c) local.push_back(node.submit(plan.command(rm, c, 0, 0, opt.mode, 1)));

  BenchResult res;
  for (auto t : local) {
    const auto ev = node.wait(t, 120);
    if (!ev.ok()) ++res.row.aborts;
    res.completions.push_back(ev);
  }
  for (const auto& r : remote)
    if (node.wait_remote(r, 120).status != static_cast<std::uint8_t>(CompletionStatus::kOk)) ++res.row.aborts;
  const double elapsed = node.runtime().now_us() - t0;

  MetricsSnapshot after;
  after.parties[0] = node.counters();
  res.metrics = detail::delta(after, before);
  res.metrics.elapsed_us = elapsed;
  res.row.batch = opt.batch;
  res.row.mode = mode_name(opt.mode);
  res.row.accels = opt.accels;
  // Only party 0's links are observable here; scale its egress to the whole fabric.
  double bits = 0;
  for (int q = 1; q < kParties; ++q) bits += 8.0 * static_cast<double>(res.metrics.link(0, q).payload_bytes);
  res.row.time_us = elapsed;
  res.row.ops_per_s = elapsed > 0 ? static_cast<double>(opt.batch) / elapsed * 1e6 : 0;
  res.row.per_link_gbps = elapsed > 0 ? bits / 3.0 / elapsed / 1e3 : 0;
  res.row.total_gbps = res.row.per_link_gbps * kParties * (kParties - 1);

  std::array<std::vector<ReplicatedShareView>, kParties> views;
  const std::uint64_t bytes = kShareRecordBytes * opt.batch;
  views[0] = node.read_views(plan.z_offset(rm), opt.batch);
  for (int q = 1; q < kParties; ++q) views[q] = PartyNode::decode_views(q, node.get(q, plan.z_offset(rm), bytes, 120), opt.batch);
  res.mismatches = detail::check_products(ops, views);
  return res;
}

// ---- reports ----

inline std::string format_number(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline const char* kReportColumns = "batch,mode,accels,ops_per_s,per_link_gbps,total_gbps,time_us,aborts";

inline std::string to_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream o;
  o << kReportColumns << "\n";
  for (const auto& r : rows)
    o << r.batch << "," << r.mode << "," << r.accels << "," << format_number(r.ops_per_s) << "," << format_number(r.per_link_gbps) << ","
      << format_number(r.total_gbps) << "," << format_number(r.time_us) << "," << r.aborts << "\n";
  return o.str();
}

inline nlohmann::json to_json(const std::vector<BenchRow>& rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows)
    arr.push_back({{"batch", r.batch}, {"mode", r.mode}, {"accels", r.accels}, {"ops_per_s", r.ops_per_s},
                   {"per_link_gbps", r.per_link_gbps}, {"total_gbps", r.total_gbps}, {"time_us", r.time_us}, {"aborts", r.aborts}});
  return arr;
}

inline std::vector<BenchRow> rows_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportColumns) throw BenchError("unexpected CSV header");
  std::vector<BenchRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw BenchError("CSV row has " + std::to_string(f.size()) + " fields");
    BenchRow r;
    r.batch = std::stoull(f[0]);
    r.mode = f[1];
    r.accels = std::stoi(f[2]);
    auto num = [](const std::string& s) {
      double v = 0;
      std::from_chars(s.data(), s.data() + s.size(), v);
      return v;
    };
    r.ops_per_s = num(f[3]);
    r.per_link_gbps = num(f[4]);
    r.total_gbps = num(f[5]);
    r.time_us = num(f[6]);
    r.aborts = std::stoull(f[7]);
    rows.push_back(r);
  }
  return rows;
}

inline std::vector<BenchRow> rows_from_json(const nlohmann::json& j) {
  std::vector<BenchRow> rows;
  for (const auto& e : j)
    rows.push_back({e.at("batch").get<std::uint64_t>(), e.at("mode").get<std::string>(), e.at("accels").get<int>(),
                    e.at("ops_per_s").get<double>(), e.at("per_link_gbps").get<double>(), e.at("total_gbps").get<double>(),
                    e.at("time_us").get<double>(), e.at("aborts").get<std::uint64_t>()});
  return rows;
}

// Writes `<stem>.csv` and `<stem>.json` next to `path`; returns both paths.
inline std::pair<std::filesystem::path, std::filesystem::path> write_reports(const std::vector<BenchRow>& rows, const std::filesystem::path& path) {
  auto csv = path, json = path;
  csv.replace_extension(".csv");
  json.replace_extension(".json");
  if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
  {
    std::ofstream o(csv);
    o << to_csv(rows);
    if (!o) throw BenchError("cannot write " + csv.string());
  }
  {
    std::ofstream o(json);
    o << to_json(rows).dump(2) << "\n";
    if (!o) throw BenchError("cannot write " + json.string());
  }
  return {csv, json};
}

// ---- saturation ----

struct SaturationReport {
  double link_gbps = 100;
  double base_gbps = 0;
  double malicious_gbps = 0;
  int min_accels_base = 0;
  int min_accels_malicious = 0;
  std::array<double, 8> offered_base{};       // A = 1..8
  std::array<double, 8> offered_malicious{};  // A = 1..8
};

inline SaturationReport saturation_report(double link_gbps, const AccelCostModel& cost) {
  if (!(link_gbps > 0)) throw BenchError("link rate must be positive");
  cost.validate();
  SaturationReport r;
  r.link_gbps = link_gbps;
  r.base_gbps = per_link_rate(cost, false);
  r.malicious_gbps = per_link_rate(cost, true);
  r.min_accels_base = min_accels(link_gbps, r.base_gbps);
  r.min_accels_malicious = min_accels(link_gbps, r.malicious_gbps);
  for (int a = 1; a <= 8; ++a) {
    r.offered_base[a - 1] = offered_load_gbps(a, r.base_gbps, link_gbps);
    r.offered_malicious[a - 1] = offered_load_gbps(a, r.malicious_gbps, link_gbps);
  }
  return r;
}

inline std::string to_text(const SaturationReport& r) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(1);
  o << "link_gbps " << r.link_gbps << "\n";
  o << "per_accel_gbps base " << r.base_gbps << " malicious " << r.malicious_gbps << "\n";
  o << "min_accels base " << r.min_accels_base << " malicious " << r.min_accels_malicious << "\n";
  o << "accels offered_base_gbps offered_malicious_gbps\n";
  for (int a = 0; a < 8; ++a) o << (a + 1) << " " << r.offered_base[a] << " " << r.offered_malicious[a] << "\n";
  return o.str();
}

}  // namespace copa
