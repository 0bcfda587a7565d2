#pragma once

// Transport abstraction and the deterministic simulated fabric.

#include <array>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>

#include "copa_mpc/link.hpp"
#include "copa_mpc/runtime.hpp"
#include "copa_mpc/wire.hpp"

namespace copa {

class FabricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Transport {
 public:
  using Handler = std::function<void(WireMessage&&)>;

  virtual ~Transport() = default;

  // Messages addressed to `party` are handed to `handler` as tasks on `rt`.
  virtual void attach(PartyId party, Runtime& rt, Handler handler) = 0;

  // Per directed link, delivery order equals send order.
  virtual void send(WireMessage m) = 0;
};

// In-process fabric on a shared SimRuntime. Each directed link serialises its
// frames: a frame starts when the link is free, occupies it for its
// serialisation time, and arrives one latency later.
class SimFabric final : public Transport {
 public:
  explicit SimFabric(SimRuntime& rt, LinkModel model = {}) : rt_(rt) {
    model.validate();
    for (auto& row : links_)
      for (auto& l : row) l.model = model;
  }

  void attach(PartyId party, Runtime& rt, Handler handler) override {
    check_party(party);
    if (&rt != &rt_) throw FabricError("SimFabric endpoints must share the fabric's SimRuntime");
    handlers_[party] = std::move(handler);
  }

  void send(WireMessage m) override {
    if (m.src >= kParties || m.dst >= kParties) throw FabricError("send: party index out of range");
    if (tamper_) tamper_(m);
    auto& link = links_[m.src][m.dst];
    const double now = rt_.now_us();
    const double start = std::max(now, link.busy_until);
    const double tx = link.model.serialization_us(m.wire_bytes());
    link.busy_until = start + tx;
    link.busy_time_us += tx;
    const double arrival = link.busy_until + link.model.latency_us;
    rt_.trace(std::string("send ") + message_type_name(m.type) + " " + std::to_string(m.src) + "->" + std::to_string(m.dst) +
              " batch=" + std::to_string(m.batch_id) + " off=" + std::to_string(m.offset) + " len=" + std::to_string(m.payload_len) +
              " arrive=" + std::to_string(arrival));
    const PartyId dst = m.dst;
    rt_.post(
        [this, dst, msg = std::move(m)]() mutable {
          if (!handlers_[dst]) throw FabricError("no endpoint attached for party " + std::to_string(dst));
          handlers_[dst](std::move(msg));
        },
        arrival - now);
  }

  void set_link(PartyId s, PartyId d, LinkModel model) {
    model.validate();
    links_.at(s).at(d).model = model;
  }
  const LinkModel& link_model(PartyId s, PartyId d) const { return links_.at(s).at(d).model; }
  double busy_time_us(PartyId s, PartyId d) const { return links_.at(s).at(d).busy_time_us; }

  // Fault injection: called on every frame before it is scheduled.
  void set_tamper(std::function<void(WireMessage&)> fn) { tamper_ = std::move(fn); }

 private:
  struct Link {
    LinkModel model;
    double busy_until = 0;
    double busy_time_us = 0;
  };

  SimRuntime& rt_;
  std::array<std::array<Link, kParties>, kParties> links_{};
  std::array<Handler, kParties> handlers_{};
  std::function<void(WireMessage&)> tamper_;
};

}  // namespace copa
