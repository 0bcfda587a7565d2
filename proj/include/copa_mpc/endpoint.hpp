#pragma once

// One party's attachment to the fabric: one-sided PUT/GET into registered
// host memory, remote accelerator triggers, tag and abort messages.
//
// Every method must run inside a runtime task or under the runtime lock.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "copa_mpc/command.hpp"
#include "copa_mpc/link.hpp"
#include "copa_mpc/memory.hpp"
#include "copa_mpc/runtime.hpp"
#include "copa_mpc/transport.hpp"
#include "copa_mpc/wire.hpp"

namespace copa {

struct GetResult {
  std::vector<std::uint8_t> bytes;
  std::optional<AbortInfo> error;
  bool ok() const { return !error.has_value(); }
};

class FabricEndpoint {
 public:
  struct Hooks {
    // After a PUT or TAGS payload has been written into host memory.
    std::function<void(const WireMessage&)> on_data;
    std::function<void(PartyId src, std::uint64_t request, const LookasideCommand&)> on_trigger;
    std::function<void(PartyId src, std::uint64_t request, const std::string& why)> on_bad_trigger;
    std::function<void(PartyId src, std::uint64_t batch_id, const AbortInfo&)> on_abort;
  };

  using GetCallback = std::function<void(GetResult)>;
  using CompletionCallback = std::function<void(const CompletionInfo&)>;

  FabricEndpoint(PartyId self, Transport& transport, Runtime& rt, HostMemoryRegion& memory)
      : self_(self), transport_(transport), rt_(rt), memory_(memory) {
    check_party(self);
    transport_.attach(self_, rt_, [this](WireMessage&& m) { receive(std::move(m)); });
  }

  FabricEndpoint(const FabricEndpoint&) = delete;
  FabricEndpoint& operator=(const FabricEndpoint&) = delete;

  PartyId self() const { return self_; }
  void set_hooks(Hooks h) { hooks_ = std::move(h); }

  // One-sided write into `dst`'s registered memory. Completes locally once sent.
  void put(PartyId dst, std::uint64_t offset, std::span<const std::uint8_t> bytes, std::uint64_t batch_id) {
    send_data(MessageType::kPut, dst, offset, bytes, batch_id);
  }

  void send_tags(PartyId dst, std::uint64_t offset, std::span<const std::uint8_t> bytes, std::uint64_t batch_id) {
    send_data(MessageType::kTags, dst, offset, bytes, batch_id);
  }

  // GET is a header-only request answered by a PUT carrying the request id.
  void get(PartyId src, std::uint64_t offset, std::uint64_t length, GetCallback cb) {
    if (length > kMaxPayloadBytes) throw FabricError("GET length too large");
    const std::uint64_t request = kReservedBatchBit | next_get_++;
    if (src == self_) {
      GetResult r;
      if (memory_.is_registered(offset, length)) r.bytes = memory_.read(offset, length);
      else r.error = AbortInfo{AbortReason::kUnregisteredRange, kUnknownElement};
      rt_.post([cb = std::move(cb), r = std::move(r)]() mutable { cb(std::move(r)); });
      return;
    }
    pending_gets_[request] = std::move(cb);
    WireMessage m;
    m.type = MessageType::kGet;
    m.dst = static_cast<std::uint8_t>(src);
    m.batch_id = request;
    m.offset = offset;
    m.payload_len = static_cast<std::uint32_t>(length);
    emit(std::move(m));
  }

  // Enqueue `cmd` on `dst`'s engine. `on_ack` receives the remote ticket (or an
  // error status), `on_final` the completion once the remote job finishes.
  std::uint64_t trigger(PartyId dst, const LookasideCommand& cmd, CompletionCallback on_ack, CompletionCallback on_final) {
    const std::uint64_t request = next_trigger_++;
    pending_triggers_[request] = {dst, std::move(on_ack), std::move(on_final), false};
    const auto rec = encode_command(cmd);
    WireMessage m;
    m.type = MessageType::kTrigger;
    m.dst = static_cast<std::uint8_t>(dst);
    m.batch_id = cmd.batch_id;
    m.offset = request;
    m.payload.assign(rec.begin(), rec.end());
    m.payload_len = static_cast<std::uint32_t>(m.payload.size());
    emit(std::move(m));
    return request;
  }

  void send_completion(PartyId dst, std::uint64_t request, std::uint64_t batch_id, const CompletionInfo& info) {
    WireMessage m;
    m.type = MessageType::kCompletion;
    m.dst = static_cast<std::uint8_t>(dst);
    m.batch_id = batch_id;
    m.offset = request;
    m.payload = encode_completion(info);
    m.payload_len = static_cast<std::uint32_t>(m.payload.size());
    emit(std::move(m));
  }

  void send_abort(PartyId dst, std::uint64_t batch_id, const AbortInfo& info) {
    WireMessage m;
    m.type = MessageType::kAbort;
    m.dst = static_cast<std::uint8_t>(dst);
    m.batch_id = batch_id;
    m.payload = encode_abort(info);
    m.payload_len = static_cast<std::uint32_t>(m.payload.size());
    emit(std::move(m));
  }

  PartyCounters counters() const {
    PartyCounters c;
    for (int q = 0; q < kParties; ++q) {
      c.out[q] = out_[q].load();
      c.in[q] = in_[q].load();
    }
    return c;
  }

  std::uint64_t messages_sent(MessageType t) const { return sent_by_type_[static_cast<int>(t)]; }
  std::size_t pending_gets() const { return pending_gets_.size(); }

 private:
  struct PendingTrigger {
    PartyId dst;
    CompletionCallback on_ack;
    CompletionCallback on_final;
    bool acked;
  };

  void send_data(MessageType type, PartyId dst, std::uint64_t offset, std::span<const std::uint8_t> bytes, std::uint64_t batch_id) {
    check_party(dst);
    if (bytes.size() > kMaxPayloadBytes) throw FabricError("payload too large");
    WireMessage m;
    m.type = type;
    m.dst = static_cast<std::uint8_t>(dst);
    m.batch_id = batch_id;
    m.offset = offset;
    m.payload.assign(bytes.begin(), bytes.end());
    m.payload_len = static_cast<std::uint32_t>(m.payload.size());
    if (dst == self_) {
      // Local loopback stays off the wire.
      m.src = static_cast<std::uint8_t>(self_);
      rt_.post([this, msg = std::move(m)]() mutable { accept_data(std::move(msg)); });
      return;
    }
    emit(std::move(m));
  }

  void emit(WireMessage m) {
    m.src = static_cast<std::uint8_t>(self_);
    if (m.dst == self_) throw FabricError("fabric messages to self are not routed");
    out_[m.dst].record(m);
    ++sent_by_type_[static_cast<int>(m.type)];
    transport_.send(std::move(m));
  }

  void receive(WireMessage&& m) {
    if (m.dst != self_) return;
    in_[m.src].record(m);
    switch (m.type) {
      case MessageType::kPut:
        if (m.batch_id & kReservedBatchBit) {
          finish_get(m.batch_id, GetResult{std::move(m.payload), std::nullopt});
          return;
        }
        accept_data(std::move(m));
        return;
      case MessageType::kTags:
        accept_data(std::move(m));
        return;
      case MessageType::kGet:
        if (!memory_.is_registered(m.offset, m.payload_len)) {
          send_abort(m.src, m.batch_id, {AbortReason::kUnregisteredRange, kUnknownElement});
          return;
        }
        {
          const auto data = memory_.view(m.offset, m.payload_len);
          send_data(MessageType::kPut, m.src, m.offset, data, m.batch_id);
        }
        return;
      case MessageType::kTrigger: {
        LookasideCommand cmd;
        try {
          cmd = decode_command(m.payload);
        } catch (const CommandError& e) {
          if (hooks_.on_bad_trigger) hooks_.on_bad_trigger(m.src, m.offset, e.what());
          return;
        }
        if (hooks_.on_trigger) hooks_.on_trigger(m.src, m.offset, cmd);
        return;
      }
      case MessageType::kCompletion: {
        auto it = pending_triggers_.find(m.offset);
        if (it == pending_triggers_.end() || it->second.dst != m.src) return;
        const auto info = decode_completion(m.payload);
        if (info.status == kCompletionAccepted) {
          it->second.acked = true;
          if (it->second.on_ack) it->second.on_ack(info);
          return;
        }
        auto pending = std::move(it->second);
        pending_triggers_.erase(it);
        // A rejection arrives as the only reply and doubles as the ack.
        if (!pending.acked && pending.on_ack) pending.on_ack(info);
        if (pending.on_final) pending.on_final(info);
        return;
      }
      case MessageType::kAbort: {
        const auto info = decode_abort(m.payload);
        if (m.batch_id & kReservedBatchBit) {
          finish_get(m.batch_id, GetResult{{}, info});
          return;
        }
        if (hooks_.on_abort) hooks_.on_abort(m.src, m.batch_id, info);
        return;
      }
    }
  }

  void accept_data(WireMessage&& m) {
    if (!memory_.is_registered(m.offset, m.payload.size())) {
      if (m.src != self_) send_abort(m.src, m.batch_id, {AbortReason::kUnregisteredRange, kUnknownElement});
      else if (hooks_.on_abort) hooks_.on_abort(self_, m.batch_id, {AbortReason::kUnregisteredRange, kUnknownElement});
      return;
    }
    memory_.write(m.offset, m.payload);
    if (hooks_.on_data) hooks_.on_data(m);
  }

  void finish_get(std::uint64_t request, GetResult r) {
    auto it = pending_gets_.find(request);
    if (it == pending_gets_.end()) return;
    auto cb = std::move(it->second);
    pending_gets_.erase(it);
    cb(std::move(r));
  }

  PartyId self_;
  Transport& transport_;
  Runtime& rt_;
  HostMemoryRegion& memory_;
  Hooks hooks_;
  std::array<AtomicLinkCounters, kParties> out_{};
  std::array<AtomicLinkCounters, kParties> in_{};
  std::array<std::uint64_t, 8> sent_by_type_{};
  std::uint64_t next_get_ = 1;
  std::uint64_t next_trigger_ = 1;
  std::map<std::uint64_t, GetCallback> pending_gets_;
  std::map<std::uint64_t, PendingTrigger> pending_triggers_;
};

}  // namespace copa
