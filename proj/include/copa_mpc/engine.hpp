#pragma once

// Behavioral model of the lookaside accelerator path: a FIFO command queue, a
// global control unit that binds the head command to the first idle
// accelerator instance, and per-instance job execution with DMA staging
// (Data A for inputs, Data B for intermediates and ingress).
//
// Commands whose local memory ranges overlap never run concurrently; the
// queue is strictly FIFO, so a conflicting head blocks later commands.

#include <algorithm>
#include <deque>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "copa_mpc/command.hpp"
#include "copa_mpc/endpoint.hpp"
#include "copa_mpc/kernels.hpp"
#include "copa_mpc/memory.hpp"
#include "copa_mpc/region_map.hpp"
#include "copa_mpc/runtime.hpp"
#include "copa_mpc/sharing.hpp"

namespace copa {

struct EngineConfig {
  int num_accels = 1;
  AccelCostModel cost;
  double fabric_timeout_s = 30.0;  // wall-clock runtimes only
};

struct DispatchRecord {
  std::uint64_t ticket = 0;
  int instance = -1;
  double started_us = 0;
  double finished_us = -1;
};

class AccelEngine {
 public:
  using CompletionHook = std::function<void(const CompletionEvent&)>;

  AccelEngine(PartyId self, HostMemoryRegion& memory, const KeyMaterial& keys, Runtime& rt, FabricEndpoint& fabric,
              RegionMap regions, EngineConfig cfg)
      : self_(self), memory_(memory), keys_(keys), rt_(rt), fabric_(fabric), regions_(regions), cfg_(cfg),
        instances_(static_cast<std::size_t>(std::max(1, cfg.num_accels))) {
    cfg_.cost.validate();
    if (cfg.num_accels < 1) throw CommandError("num_accels must be at least 1");
    if (keys.owner() != self) throw CommandError("key material belongs to a different party");
  }

  AccelEngine(const AccelEngine&) = delete;
  AccelEngine& operator=(const AccelEngine&) = delete;

  // Validates and enqueues; throws CommandError and enqueues nothing on failure.
  std::uint64_t submit(const LookasideCommand& cmd) {
    validate(cmd);
    auto job = std::make_unique<Job>();
    job->ticket = next_ticket_++;
    job->cmd = cmd;
    job->mode = cmd.mode();
    job->ranges = local_ranges(cmd);
    const auto ticket = job->ticket;
    rt_.trace("p" + std::to_string(self_) + " submit ticket=" + std::to_string(ticket) + " op=" + opcode_name(cmd.opcode) +
              " batch=" + std::to_string(cmd.batch_id) + " count=" + std::to_string(cmd.count));
    queue_.push_back(std::move(job));
    rt_.post([this] { pump(); });
    return ticket;
  }

  // Ingress accounting for fused multiplies; called for every PUT/TAGS written locally.
  void on_data(const WireMessage& m) {
    if (!regions_.ingress().contains({m.offset, m.payload.size()})) return;
    const auto base = regions_.ingress_offset(m.batch_id);
    if (m.offset < base || m.offset + m.payload.size() > base + regions_.slot_bytes()) return;
    // Staged per batch, so a peer already working on a later batch that shares
    // this slot cannot overwrite values still awaited here.
    auto& st = ingress_[m.batch_id];
    const auto rel = m.offset - base;
    if (st.buf.size() < rel + m.payload.size()) st.buf.resize(rel + m.payload.size());
    std::copy(m.payload.begin(), m.payload.end(), st.buf.begin() + static_cast<std::ptrdiff_t>(rel));
    if (m.type == MessageType::kTags) st.tags[m.src] += m.payload.size();
    else st.data[m.src] += m.payload.size();
    for (auto& [ticket, job] : running_)
      if (job->phase == Phase::kAwaitIngress && job->cmd.batch_id == m.batch_id) try_stage2(*job);
  }

  // Fails every in-flight job of `batch_id`; with `poison`, later commands for it fail fast.
  void abort_batch(std::uint64_t batch_id, const AbortInfo& info, bool poison) {
    if (poison) poisoned_.insert(batch_id);
    std::vector<std::uint64_t> hit;
    for (auto& [ticket, job] : running_)
      if (job->cmd.batch_id == batch_id) hit.push_back(ticket);
    for (auto t : hit) {
      auto it = running_.find(t);
      if (it == running_.end()) continue;
      auto& job = *it->second;
      if (job.phase == Phase::kAwaitIngress || job.phase == Phase::kFetch) {
        job.failure = VerificationFailure{batch_id, info.element, {}};
        complete(job, CompletionStatus::kAbort, "batch aborted by peer");
      } else {
        job.aborted = true;
      }
    }
  }

  bool is_poisoned(std::uint64_t batch_id) const { return poisoned_.count(batch_id) != 0; }

  const CompletionEvent* completion(std::uint64_t ticket) const {
    auto it = completions_.find(ticket);
    return it == completions_.end() ? nullptr : &it->second;
  }

  // Called for every completion, including local tag-mismatch aborts.
  void set_completion_hook(CompletionHook h) { on_complete_ = std::move(h); }

  const std::vector<DispatchRecord>& dispatch_log() const { return dispatch_log_; }
  std::size_t queued() const { return queue_.size(); }
  std::size_t running() const { return running_.size(); }
  std::uint64_t ops_completed() const { return ops_completed_; }
  std::uint64_t last_ticket() const { return next_ticket_ - 1; }
  const RegionMap& regions() const { return regions_; }
  const EngineConfig& config() const { return cfg_; }
  PartyId party() const { return self_; }

 private:
  enum class Phase { kQueued, kFetch, kCompute, kAwaitIngress, kStage2, kDone };

  struct Job {
    std::uint64_t ticket = 0;
    LookasideCommand cmd;
    ModeFlags mode;
    std::vector<ByteRange> ranges;
    Phase phase = Phase::kQueued;
    int instance = -1;
    double started_us = 0;
    PartyCounters counters_at_start;
    std::vector<std::uint8_t> data_a;  // staged src_a || src_b
    std::vector<std::uint8_t> data_b;  // stage-1 block, then ingress block
    std::vector<std::uint8_t> result;
    int fetches_pending = 0;
    bool aborted = false;
    bool detected_here = false;
    std::optional<VerificationFailure> failure;
    std::string error;
  };

  struct IngressState {
    std::array<std::uint64_t, kParties> data{};
    std::array<std::uint64_t, kParties> tags{};
    std::vector<std::uint8_t> buf;
  };

  void validate(const LookasideCommand& c) const {
    if (!known_opcode(static_cast<std::uint8_t>(c.opcode))) throw CommandError("unknown opcode");
    if (c.count == 0) throw CommandError("count must be at least 1");
    if ((c.flags & ~std::uint8_t{0x07}) != 0) throw CommandError("unknown flag bits");
    if (c.src_party >= kParties || c.dst_party >= kParties) throw CommandError("party index out of range");
    if (c.batch_id & kReservedBatchBit) throw CommandError("batch ids with the top bit set are reserved");
    std::uint64_t span = 0, end = 0;
    if (__builtin_mul_overflow(std::uint64_t{c.count}, std::uint64_t{16}, &span) || __builtin_add_overflow(c.ctr_base, span, &end))
      throw CommandError("PRF counter range overflows");
    const auto fp = footprint(c);
    auto check = [&](std::uint64_t off, std::uint64_t len, const char* what) {
      if (!memory_.in_bounds(off, len))
        throw CommandError(std::string(what) + " range [" + std::to_string(off) + ", +" + std::to_string(len) + ") out of bounds");
    };
    check(c.src_a, fp.src_a, "src_a");
    check(c.src_b, fp.src_b, "src_b");
    check(c.dst, fp.dst, "dst");
    if (c.opcode == Opcode::kMulFused && regions_.max_fused_count(c.mode()) < c.count)
      throw CommandError("fused batch of " + std::to_string(c.count) + " exceeds the region slot capacity of " +
                         std::to_string(regions_.max_fused_count(c.mode())));
  }

  std::vector<ByteRange> local_ranges(const LookasideCommand& c) const {
    const auto fp = footprint(c);
    std::vector<ByteRange> r;
    if (c.src_party == self_) {
      r.push_back({c.src_a, fp.src_a});
      r.push_back({c.src_b, fp.src_b});
    }
    if (c.dst_party == self_) r.push_back({c.dst, fp.dst});
    if (c.opcode == Opcode::kMulFused) {
      r.push_back({regions_.intermediate_offset(c.batch_id), stage1_bytes(c.mode(), c.count)});
      r.push_back({regions_.ingress_offset(c.batch_id), ingress_bytes(c.mode(), c.count)});
    }
    return r;
  }

  bool conflicts(const Job& j) const {
    for (const auto& [t, other] : running_)
      for (const auto& a : j.ranges)
        for (const auto& b : other->ranges)
          if (a.overlaps(b)) return true;
    return false;
  }

  // Control unit: bind the head of the queue to the first idle instance.
  void pump() {
    while (!queue_.empty()) {
      auto& head = *queue_.front();
      if (is_poisoned(head.cmd.batch_id)) {
        auto job = std::move(queue_.front());
        queue_.pop_front();
        job->started_us = rt_.now_us();
        job->counters_at_start = fabric_.counters();
        Job& ref = *job;
        running_[ref.ticket] = std::move(job);
        ref.failure = VerificationFailure{ref.cmd.batch_id, kUnknownElement, {}};
        complete(ref, CompletionStatus::kAbort, "batch is poisoned by an earlier abort");
        continue;
      }
      auto idle = std::find(instances_.begin(), instances_.end(), std::uint64_t{0});
      if (idle == instances_.end() || conflicts(head)) return;
      auto job = std::move(queue_.front());
      queue_.pop_front();
      job->instance = static_cast<int>(idle - instances_.begin());
      *idle = job->ticket;
      job->started_us = rt_.now_us();
      job->counters_at_start = fabric_.counters();
      dispatch_log_.push_back({job->ticket, job->instance, job->started_us, -1});
      rt_.trace("p" + std::to_string(self_) + " dispatch ticket=" + std::to_string(job->ticket) + " inst=" + std::to_string(job->instance));
      Job& ref = *job;
      running_[ref.ticket] = std::move(job);
      start(ref);
    }
  }

  void start(Job& job) {
    const auto fp = footprint(job.cmd);
    job.phase = Phase::kFetch;
    job.data_a.assign(fp.src_a + fp.src_b, 0);
    if (job.cmd.src_party == self_) {
      auto a = memory_.view(job.cmd.src_a, fp.src_a);
      auto b = memory_.view(job.cmd.src_b, fp.src_b);
      std::copy(a.begin(), a.end(), job.data_a.begin());
      std::copy(b.begin(), b.end(), job.data_a.begin() + static_cast<std::ptrdiff_t>(fp.src_a));
      compute(job);
      return;
    }
    // Remote source: fetch both operands over the fabric first.
    job.fetches_pending = 2;
    const auto ticket = job.ticket;
    auto fetch = [this, ticket](std::uint64_t offset, std::uint64_t len, std::uint64_t at) {
      fabric_.get(job_party(ticket), offset, len, [this, ticket, at](GetResult r) {
        auto it = running_.find(ticket);
        if (it == running_.end()) return;
        Job& j = *it->second;
        if (!r.ok()) {
          complete(j, CompletionStatus::kError, "remote source fetch failed");
          return;
        }
        std::copy(r.bytes.begin(), r.bytes.end(), j.data_a.begin() + static_cast<std::ptrdiff_t>(at));
        if (--j.fetches_pending == 0) compute(j);
      });
    };
    fetch(job.cmd.src_a, fp.src_a, 0);
    fetch(job.cmd.src_b, fp.src_b, fp.src_a);
  }

  PartyId job_party(std::uint64_t ticket) const { return running_.at(ticket)->cmd.src_party; }

  kernels::BatchContext batch_context(const Job& job) const {
    return {self_, job.mode, job.cmd.batch_id, job.cmd.ctr_base, job.cmd.count};
  }

  void compute(Job& job) {
    if (job.aborted) {
      complete(job, CompletionStatus::kAbort, "batch aborted by peer");
      return;
    }
    job.phase = Phase::kCompute;
    const auto fp = footprint(job.cmd);
    const auto n = job.cmd.count;
    const double cost = cfg_.cost.job_time_us(n);
    const auto ctx = batch_context(job);
    Job* j = &job;
    const std::span<const std::uint8_t> a(j->data_a.data(), fp.src_a);
    const std::span<const std::uint8_t> b(j->data_a.data() + fp.src_a, fp.src_b);
    switch (job.cmd.opcode) {
      case Opcode::kAdd:
        j->result.assign(fp.dst, 0);
        rt_.offload([this, j, a, b, n] { guarded(*j, [&] { kernels::add_batch(self_, a, b, j->result, n); }); }, cost,
                    [this, ticket = job.ticket] { with_job(ticket, [this](Job& jj) { write_result(jj); }); });
        return;
      case Opcode::kMulStage1:
        j->result.assign(fp.dst, 0);
        rt_.offload([this, j, a, b, ctx] { guarded(*j, [&] { kernels::stage1_batch(ctx, keys_, a, b, j->result); }); }, cost,
                    [this, ticket = job.ticket] { with_job(ticket, [this](Job& jj) { write_result(jj); }); });
        return;
      case Opcode::kMulStage2:
        j->result.assign(fp.dst, 0);
        rt_.offload(
            [this, j, a, b, ctx] { guarded(*j, [&] { j->failure = kernels::stage2_batch(ctx, keys_, a, b, j->result); }); }, cost,
            [this, ticket = job.ticket] { with_job(ticket, [this](Job& jj) { finish_stage2(jj); }); });
        return;
      case Opcode::kMulFused:
        j->data_b.assign(stage1_bytes(job.mode, n), 0);
        rt_.offload([this, j, a, b, ctx] { guarded(*j, [&] { kernels::stage1_batch(ctx, keys_, a, b, j->data_b); }); }, cost,
                    [this, ticket = job.ticket] { with_job(ticket, [this](Job& jj) { communicate(jj); }); });
        return;
    }
  }

  template <typename F>
  void guarded(Job& job, F&& f) {
    try {
      f();
    } catch (const std::exception& e) {
      job.error = e.what();
    }
  }

  template <typename F>
  void with_job(std::uint64_t ticket, F&& f) {
    auto it = running_.find(ticket);
    if (it == running_.end()) return;
    Job& job = *it->second;
    if (!job.error.empty()) {
      complete(job, CompletionStatus::kError, job.error);
      return;
    }
    f(job);
  }

  // Stage-1 results go back to host memory; wire values and tags go straight to the fabric.
  void communicate(Job& job) {
    if (job.aborted) {
      complete(job, CompletionStatus::kAbort, "batch aborted by peer");
      return;
    }
    const std::uint64_t n = job.cmd.count;
    const auto batch = job.cmd.batch_id;
    memory_.write(regions_.intermediate_offset(batch), job.data_b);
    const std::span<const std::uint8_t> s1(job.data_b);
    const std::uint64_t egress_base = kShareRecordBytes * n;
    const std::uint64_t verify_base = 2 * kShareRecordBytes * n;
    const std::uint64_t block = kRingBytes * n;
    for (int k = 0; k < 3; ++k) {
      const auto route = kernels::egress_route(self_, k);
      fabric_.put(route.receiver, regions_.ingress_offset(batch) + block * route.ingress_block,
                  s1.subspan(egress_base + block * k, block), batch);
    }
    if (job.mode.malicious) {
      const std::uint64_t vb = job.mode.per_term_tags() ? kTagBytes * n : 32;
      for (int k = 0; k < 3; ++k) {
        const auto route = kernels::verifier_route(self_, k);
        fabric_.send_tags(route.receiver, regions_.ingress_offset(batch) + kShareRecordBytes * n + vb * route.ingress_block,
                          s1.subspan(verify_base + vb * k, vb), batch);
      }
    }
    job.phase = Phase::kAwaitIngress;
    if (!rt_.virtual_time()) {
      rt_.post(
          [this, ticket = job.ticket] {
            auto it = running_.find(ticket);
            if (it != running_.end() && it->second->phase == Phase::kAwaitIngress)
              complete(*it->second, CompletionStatus::kError, "fabric timeout waiting for ingress");
          },
          cfg_.fabric_timeout_s * 1e6);
    }
    try_stage2(job);
  }

  bool ingress_ready(const Job& job) const {
    auto it = ingress_.find(job.cmd.batch_id);
    if (it == ingress_.end()) return false;
    const std::uint64_t n = job.cmd.count;
    for (int q = 0; q < kParties; ++q) {
      if (q == self_) continue;
      if (it->second.data[q] < kRingBytes * n) return false;
      if (job.mode.per_term_tags() && it->second.tags[q] < kTagBytes * n) return false;
      if (job.mode.link_digests() && it->second.tags[q] < 32) return false;
    }
    return true;
  }

  void try_stage2(Job& job) {
    if (job.phase != Phase::kAwaitIngress || !ingress_ready(job)) return;
    job.phase = Phase::kStage2;
    const std::uint64_t n = job.cmd.count;
    auto node = ingress_.extract(job.cmd.batch_id);
    auto& in = node.mapped().buf;
    in.resize(ingress_bytes(job.mode, n));
    // DMA the ingress block into Data B behind the local accumulators.
    job.data_b.resize(kShareRecordBytes * n);
    job.data_b.insert(job.data_b.end(), in.begin(), in.end());
    job.result.assign(kShareRecordBytes * n, 0);
    const auto ctx = batch_context(job);
    Job* j = &job;
    const std::span<const std::uint8_t> local(j->data_b.data(), kShareRecordBytes * n);
    const std::span<const std::uint8_t> ingress(j->data_b.data() + kShareRecordBytes * n, in.size());
    rt_.trace("p" + std::to_string(self_) + " stage2 ticket=" + std::to_string(job.ticket));
    rt_.offload(
        [this, j, local, ingress, ctx] { guarded(*j, [&] { j->failure = kernels::stage2_batch(ctx, keys_, local, ingress, j->result); }); },
        cfg_.cost.stream_time_us(n), [this, ticket = job.ticket] { with_job(ticket, [this](Job& jj) { finish_stage2(jj); }); });
  }

  void finish_stage2(Job& job) {
    if (job.failure) {
      job.detected_here = true;
      complete(job, CompletionStatus::kAbort, "verification tag mismatch");
      return;
    }
    if (job.aborted) {
      complete(job, CompletionStatus::kAbort, "batch aborted by peer");
      return;
    }
    write_result(job);
  }

  void write_result(Job& job) {
    if (job.cmd.dst_party == self_) memory_.write(job.cmd.dst, job.result);
    else fabric_.put(job.cmd.dst_party, job.cmd.dst, job.result, job.cmd.batch_id);
    complete(job, CompletionStatus::kOk, {});
  }

  void complete(Job& job, CompletionStatus status, std::string message) {
    CompletionEvent ev;
    ev.ticket = job.ticket;
    ev.batch_id = job.cmd.batch_id;
    ev.opcode = job.cmd.opcode;
    ev.status = status;
    ev.message = std::move(message);
    ev.simulated_time_us = cfg_.cost.job_time_us(job.cmd.count);
    ev.started_us = job.started_us;
    ev.finished_us = rt_.now_us();
    ev.instance = job.instance;
    if (job.failure) {
      ev.failing_element = job.failure->element_index;
      ev.failing_term = job.failure->term;
    }
    const auto now = fabric_.counters();
    ev.counters.payload_out = now.total_out().payload_bytes - job.counters_at_start.total_out().payload_bytes;
    ev.counters.payload_in = now.total_in().payload_bytes - job.counters_at_start.total_in().payload_bytes;
    ev.counters.messages_out = now.total_out().messages - job.counters_at_start.total_out().messages;
    if (status == CompletionStatus::kOk) ops_completed_ += job.cmd.count;
    ev.detected_here = job.detected_here;
    // The first abort poisons the batch; later commands for it fail fast.
    if (status == CompletionStatus::kAbort) poisoned_.insert(job.cmd.batch_id);
    if (job.cmd.opcode == Opcode::kMulFused) ingress_.erase(job.cmd.batch_id);

    if (job.instance >= 0) {
      instances_[static_cast<std::size_t>(job.instance)] = 0;
      for (auto it = dispatch_log_.rbegin(); it != dispatch_log_.rend(); ++it)
        if (it->ticket == job.ticket) {
          it->finished_us = ev.finished_us;
          break;
        }
    }
    rt_.trace("p" + std::to_string(self_) + " complete ticket=" + std::to_string(job.ticket) + " status=" + status_name(status));
    job.phase = Phase::kDone;
    const auto ticket = job.ticket;
    running_.erase(ticket);  // `job` is dangling from here on
    completions_[ticket] = ev;
    if (on_complete_) on_complete_(ev);
    rt_.post([this] { pump(); });
  }

  PartyId self_;
  HostMemoryRegion& memory_;
  const KeyMaterial& keys_;
  Runtime& rt_;
  FabricEndpoint& fabric_;
  RegionMap regions_;
  EngineConfig cfg_;

  std::deque<std::unique_ptr<Job>> queue_;
  std::map<std::uint64_t, std::unique_ptr<Job>> running_;
  std::vector<std::uint64_t> instances_;  // 0 = idle, otherwise the bound ticket
  std::map<std::uint64_t, CompletionEvent> completions_;
  std::map<std::uint64_t, IngressState> ingress_;
  std::set<std::uint64_t> poisoned_;
  std::vector<DispatchRecord> dispatch_log_;
  std::uint64_t next_ticket_ = 1;
  std::uint64_t ops_completed_ = 0;
  CompletionHook on_complete_;
};

}  // namespace copa
