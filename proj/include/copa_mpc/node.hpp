#pragma once

// A party daemon: host memory, fabric endpoint and accelerator engine wired
// together, plus the host-facing API (submit, wait, trigger, put/get, dealing).
//
// Host API methods take the runtime lock themselves and are meant for a
// single controlling thread. On a SimRuntime, waiting drives the simulation.

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "copa_mpc/endpoint.hpp"
#include "copa_mpc/engine.hpp"
#include "copa_mpc/region_map.hpp"
#include "copa_mpc/runtime.hpp"
#include "copa_mpc/sharing.hpp"
#include "copa_mpc/transport.hpp"

namespace copa {

struct NodeOptions {
  std::uint64_t memory_size = kDefaultMemoryBytes;
  std::uint32_t batch_slots = 4;
  EngineConfig engine;
};

struct AbortRecord {
  PartyId from = 0;  // party that raised it
  std::uint64_t batch_id = 0;
  AbortInfo info;
};

class NodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class PartyNode {
 public:
  using RequestKey = std::pair<PartyId, std::uint64_t>;

  struct RemoteJob {
    PartyId dst = 0;
    std::uint64_t request = 0;
  };

  PartyNode(PartyId self, Runtime& rt, Transport& transport, KeyMaterial keys, NodeOptions opt = {})
      : self_(self), rt_(rt), keys_(std::move(keys)), opt_(opt), memory_(opt.memory_size), regions_(opt.memory_size, opt.batch_slots),
        fabric_(self, transport, rt, memory_), engine_(self, memory_, keys_, rt, fabric_, regions_, opt.engine) {
    if (!keys_.complete()) throw NodeError("party " + std::to_string(self) + " is missing key material");
    regions_.register_all(memory_);
    FabricEndpoint::Hooks h;
    h.on_data = [this](const WireMessage& m) { engine_.on_data(m); };
    h.on_trigger = [this](PartyId src, std::uint64_t request, const LookasideCommand& cmd) { serve_trigger(src, request, cmd); };
    h.on_bad_trigger = [this](PartyId src, std::uint64_t request, const std::string& why) {
      rt_.trace("p" + std::to_string(self_) + " reject trigger from " + std::to_string(src) + ": " + why);
      fabric_.send_completion(src, request, 0, {0, 0, 0, static_cast<std::uint8_t>(CompletionStatus::kError)});
    };
    h.on_abort = [this](PartyId src, std::uint64_t batch, const AbortInfo& info) {
      aborts_.push_back({src, batch, info});
      engine_.abort_batch(batch, info, true);
    };
    fabric_.set_hooks(std::move(h));
    engine_.set_completion_hook([this](const CompletionEvent& ev) { on_completion(ev); });
  }

  PartyNode(const PartyNode&) = delete;
  PartyNode& operator=(const PartyNode&) = delete;

  PartyId id() const { return self_; }
  const RegionMap& regions() const { return regions_; }
  const NodeOptions& options() const { return opt_; }
  Runtime& runtime() { return rt_; }

  // ---- host API ----

  std::uint64_t submit(const LookasideCommand& cmd) {
    auto lk = rt_.lock();
    return engine_.submit(cmd);
  }

  CompletionEvent wait(std::uint64_t ticket, double timeout_s = 60.0) {
    auto lk = rt_.lock();
    if (!rt_.wait_until(lk, [&] { return engine_.completion(ticket) != nullptr; }, timeout_s))
      throw NodeError("timed out waiting for ticket " + std::to_string(ticket));
    return *engine_.completion(ticket);
  }

  RemoteJob trigger(PartyId dst, const LookasideCommand& cmd) {
    auto lk = rt_.lock();
    // Replies run as later tasks, after the request id below is known.
    auto id = std::make_shared<std::uint64_t>(0);
    *id = fabric_.trigger(
        dst, cmd, [this, dst, id](const CompletionInfo& c) { remote_acks_[{dst, *id}] = c; },
        [this, dst, id](const CompletionInfo& c) { remote_final_[{dst, *id}] = c; });
    return {dst, *id};
  }

  // The accept (or rejection) reply to a trigger; carries the remote ticket.
  CompletionInfo wait_ack(const RemoteJob& job, double timeout_s = 60.0) {
    auto lk = rt_.lock();
    const RequestKey key{job.dst, job.request};
    if (!rt_.wait_until(lk, [&] { return remote_acks_.count(key) != 0; }, timeout_s))
      throw NodeError("timed out waiting for party " + std::to_string(job.dst) + " to accept request " + std::to_string(job.request));
    return remote_acks_.at(key);
  }

  // Final completion of a triggered job.
  CompletionInfo wait_remote(const RemoteJob& job, double timeout_s = 60.0) {
    auto lk = rt_.lock();
    const RequestKey key{job.dst, job.request};
    if (!rt_.wait_until(lk, [&] { return remote_final_.count(key) != 0; }, timeout_s))
      throw NodeError("timed out waiting for party " + std::to_string(job.dst) + " to finish request " + std::to_string(job.request));
    return remote_final_.at(key);
  }

  void put(PartyId dst, std::uint64_t offset, std::span<const std::uint8_t> bytes, std::uint64_t batch_id = 0) {
    auto lk = rt_.lock();
    fabric_.put(dst, offset, bytes, batch_id);
  }

  std::vector<std::uint8_t> get(PartyId src, std::uint64_t offset, std::uint64_t length, double timeout_s = 60.0) {
    auto lk = rt_.lock();
    std::optional<GetResult> result;
    fabric_.get(src, offset, length, [&result](GetResult r) { result = std::move(r); });
    if (!rt_.wait_until(lk, [&] { return result.has_value(); }, timeout_s)) throw NodeError("GET timed out");
    if (!result->ok()) throw NodeError("GET of [" + std::to_string(offset) + ", +" + std::to_string(length) + ") from party " +
                                       std::to_string(src) + " failed: unregistered range");
    return std::move(result->bytes);
  }

  void write_local(std::uint64_t offset, std::span<const std::uint8_t> bytes) {
    auto lk = rt_.lock();
    memory_.write(offset, bytes);
  }

  std::vector<std::uint8_t> read_local(std::uint64_t offset, std::uint64_t length) {
    auto lk = rt_.lock();
    return memory_.read(offset, length);
  }

  // Deals each secret, keeps this party's view at `offset` and PUTs every
  // peer's view to the same offset in its memory (one PUT per peer).
  template <RingRandomness R>
  void deal_inputs(std::span<const RingElement> secrets, std::uint64_t offset, R& rng, std::uint64_t batch_id = 0) {
    if (secrets.empty()) return;
    const std::uint64_t bytes = kShareRecordBytes * secrets.size();
    if (!memory_.in_bounds(offset, bytes) || !regions_.input().contains({offset, bytes}))
      throw NodeError("dealing " + std::to_string(secrets.size()) + " secrets at " + std::to_string(offset) + " exceeds the input region");
    std::array<std::vector<std::uint8_t>, kParties> records;
    for (auto& r : records) r.resize(bytes);
    for (std::size_t i = 0; i < secrets.size(); ++i) {
      const auto d = deal(secrets[i], rng);
      for (int q = 0; q < kParties; ++q) view_of(d, q).store(std::span(records[q]).subspan(kShareRecordBytes * i, kShareRecordBytes));
    }
    auto lk = rt_.lock();
    memory_.write(offset, records[self_]);
    for (int q = 0; q < kParties; ++q)
      if (q != self_) fabric_.put(q, offset, records[q], batch_id);
  }

  std::vector<ReplicatedShareView> read_views(std::uint64_t offset, std::uint64_t count) {
    const auto bytes = read_local(offset, kShareRecordBytes * count);
    return decode_views(self_, bytes, count);
  }

  static std::vector<ReplicatedShareView> decode_views(PartyId p, std::span<const std::uint8_t> bytes, std::uint64_t count) {
    std::vector<ReplicatedShareView> out;
    out.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) out.push_back(ReplicatedShareView::load(p, bytes.subspan(kShareRecordBytes * i, kShareRecordBytes)));
    return out;
  }

  // Serves triggers, PUTs and GETs until `stop` holds (checked whenever a task runs).
  void run_headless(const std::function<bool()>& stop, double poll_s = 0.5) {
    headless_ = true;
    auto lk = rt_.lock();
    while (!stop()) rt_.wait_until(lk, stop, poll_s);
  }

  PartyCounters counters() const {
    auto c = fabric_.counters();
    c.ops_completed = engine_.ops_completed();
    return c;
  }

  std::vector<AbortRecord> aborts() {
    auto lk = rt_.lock();
    return aborts_;
  }
  std::uint64_t triggers_sent() const { return fabric_.messages_sent(MessageType::kTrigger); }
  bool headless() const { return headless_; }

  // Direct access for code already running inside a runtime task.
  AccelEngine& engine() { return engine_; }
  FabricEndpoint& fabric() { return fabric_; }
  HostMemoryRegion& memory() { return memory_; }

 private:
  void serve_trigger(PartyId src, std::uint64_t request, const LookasideCommand& cmd) {
    std::uint64_t ticket = 0;
    try {
      ticket = engine_.submit(cmd);
    } catch (const std::exception& e) {
      rt_.trace("p" + std::to_string(self_) + " trigger from " + std::to_string(src) + " rejected: " + e.what());
      fabric_.send_completion(src, request, cmd.batch_id,
                              {0, 0, static_cast<std::uint8_t>(cmd.opcode), static_cast<std::uint8_t>(CompletionStatus::kError)});
      return;
    }
    triggered_[ticket] = {src, request};
    fabric_.send_completion(src, request, cmd.batch_id, {ticket, 0, static_cast<std::uint8_t>(cmd.opcode), kCompletionAccepted});
  }

  void on_completion(const CompletionEvent& ev) {
    if (ev.status == CompletionStatus::kAbort && ev.detected_here) {
      const AbortInfo info{AbortReason::kTagMismatch, ev.failing_element};
      aborts_.push_back({self_, ev.batch_id, info});
      for (int q = 0; q < kParties; ++q)
        if (q != self_) fabric_.send_abort(q, ev.batch_id, info);
    }
    auto it = triggered_.find(ev.ticket);
    if (it == triggered_.end()) return;
    const auto [src, request] = it->second;
    triggered_.erase(it);
    fabric_.send_completion(src, request, ev.batch_id,
                            {ev.ticket, ev.simulated_time_us, static_cast<std::uint8_t>(ev.opcode), static_cast<std::uint8_t>(ev.status)});
  }

  PartyId self_;
  Runtime& rt_;
  KeyMaterial keys_;
  NodeOptions opt_;
  HostMemoryRegion memory_;
  RegionMap regions_;
  FabricEndpoint fabric_;
  AccelEngine engine_;

  std::map<std::uint64_t, std::pair<PartyId, std::uint64_t>> triggered_;
  std::map<RequestKey, CompletionInfo> remote_acks_;
  std::map<RequestKey, CompletionInfo> remote_final_;
  std::vector<AbortRecord> aborts_;
  bool headless_ = false;
};

}  // namespace copa
