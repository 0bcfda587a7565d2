#pragma once

// Ready-made deployments: four nodes on one simulated fabric, or one node of
// a socket deployment driven by a PartyConfig.

#include <array>
#include <memory>

#include "copa_mpc/config.hpp"
#include "copa_mpc/node.hpp"
#include "copa_mpc/socket_transport.hpp"
#include "copa_mpc/transport.hpp"

namespace copa {

class SimCluster {
 public:
  SimCluster(const std::array<KeyMaterial, kParties>& keys, NodeOptions opt = {}, LinkModel link = {}) : fabric_(rt_, link) {
    for (int p = 0; p < kParties; ++p) nodes_[p] = std::make_unique<PartyNode>(p, rt_, fabric_, keys[p], opt);
  }

  static std::unique_ptr<SimCluster> from_configs(const std::array<PartyConfig, kParties>& cfgs, const std::array<KeyMaterial, kParties>& keys) {
    validate_cluster(cfgs);
    std::array<KeyMaterial, kParties> ordered;
    for (const auto& c : cfgs) ordered[c.party_id] = keys[c.party_id];
    auto cl = std::make_unique<SimCluster>(ordered, cfgs[0].node_options(), cfgs[0].link());
    for (const auto& c : cfgs)
      for (int q = 0; q < kParties; ++q)
        if (q != c.party_id) cl->fabric_.set_link(c.party_id, q, c.link());
    return cl;
  }

  SimCluster(const SimCluster&) = delete;
  SimCluster& operator=(const SimCluster&) = delete;

  PartyNode& node(PartyId p) { return *nodes_.at(static_cast<std::size_t>(p)); }
  SimRuntime& runtime() { return rt_; }
  SimFabric& fabric() { return fabric_; }

  // Drain every pending event.
  void run() { rt_.run(); }

  MetricsSnapshot metrics(double elapsed_us) const {
    MetricsSnapshot m;
    for (int p = 0; p < kParties; ++p) m.parties[p] = nodes_[p]->counters();
    m.elapsed_us = elapsed_us;
    return m;
  }

 private:
  SimRuntime rt_;
  SimFabric fabric_;
  std::array<std::unique_ptr<PartyNode>, kParties> nodes_;
};

// One party of a socket deployment. Construction blocks until all peers are connected.
class SocketNode {
 public:
  SocketNode(const PartyConfig& cfg, KeyMaterial keys, double connect_timeout_s = 30.0)
      : rt_(1), transport_(cfg.party_id, cfg.peers), node_(cfg.party_id, rt_, transport_, std::move(keys), cfg.node_options()) {
    transport_.connect(connect_timeout_s);
  }

  ~SocketNode() {
    rt_.stop();
    transport_.shutdown();
  }

  SocketNode(const SocketNode&) = delete;
  SocketNode& operator=(const SocketNode&) = delete;

  PartyNode& node() { return node_; }
  SocketTransport& transport() { return transport_; }

  // Serves peers until one of them disconnects.
  void run_headless() {
    node_.run_headless([this] { return transport_.peer_closed(); });
  }

 private:
  ThreadRuntime rt_;
  SocketTransport transport_;
  PartyNode node_;
};

}  // namespace copa
