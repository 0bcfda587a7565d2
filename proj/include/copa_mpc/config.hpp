#pragma once

// Party configuration. Accepted as flat `key = value` text ('#' comments) or
// as a JSON object with the same keys. `peers` is a comma-separated list of
// four host:port endpoints (a JSON array of strings also works).

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "copa_mpc/link.hpp"
#include "copa_mpc/node.hpp"
#include "copa_mpc/socket_transport.hpp"

namespace copa {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TransportKind { kSockets, kSimulated };

struct PartyConfig {
  PartyId party_id = 0;
  std::array<Endpoint, kParties> peers{};
  std::uint64_t memory_size = kDefaultMemoryBytes;
  std::uint32_t batch_slots = 4;
  int num_accels = 1;
  double clock_mhz = 275.0;
  double cycles_per_element = 2.0;
  double dma_startup_us = 1.0;
  double bandwidth_gbps = 100.0;
  double latency_us = 1.0;
  bool malicious = false;
  bool masking = true;
  bool batched_hash = false;
  std::string key_file;
  TransportKind transport = TransportKind::kSockets;
  double fabric_timeout_s = 30.0;

  ModeFlags mode() const { return {malicious, masking, batched_hash}; }
  AccelCostModel cost() const { return {clock_mhz, cycles_per_element, dma_startup_us}; }
  LinkModel link() const { return {bandwidth_gbps, latency_us}; }

  NodeOptions node_options() const {
    NodeOptions o;
    o.memory_size = memory_size;
    o.batch_slots = batch_slots;
    o.engine.num_accels = num_accels;
    o.engine.cost = cost();
    o.engine.fabric_timeout_s = fabric_timeout_s;
    return o;
  }

  void validate() const {
    if (party_id < 0 || party_id >= kParties) throw ConfigError("party_id must be 0..3");
    if (num_accels < 1) throw ConfigError("num_accels must be at least 1");
    if (batch_slots < 1) throw ConfigError("batch_slots must be at least 1");
    if (memory_size < 4096) throw ConfigError("memory_size too small");
    try {
      cost().validate();
      link().validate();
      RegionMap(memory_size, batch_slots);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    if (transport == TransportKind::kSockets) {
      for (int a = 0; a < kParties; ++a) {
        if (peers[a].port == 0) throw ConfigError("peers must list 4 host:port endpoints");
        for (int b = a + 1; b < kParties; ++b)
          if (peers[a] == peers[b]) throw ConfigError("duplicate peer endpoint " + peers[a].str());
      }
    }
  }
};

namespace detail {

inline std::string trim(std::string s) {
  auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + v + "'");
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

inline void apply_key(PartyConfig& c, const std::string& key, const std::string& v) {
  if (key == "party_id") c.party_id = parse_number<int>(key, v);
  else if (key == "peers") {
    std::vector<std::string> parts;
    std::stringstream ss(v);
    for (std::string item; std::getline(ss, item, ',');) parts.push_back(trim(item));
    if (parts.size() != kParties) throw ConfigError("peers: expected 4 endpoints, got " + std::to_string(parts.size()));
    try {
      for (int q = 0; q < kParties; ++q) c.peers[q] = parse_endpoint(parts[q]);
    } catch (const FabricError& e) {
      throw ConfigError(std::string("peers: ") + e.what());
    }
  } else if (key == "memory_size") c.memory_size = parse_number<std::uint64_t>(key, v);
  else if (key == "batch_slots") c.batch_slots = parse_number<std::uint32_t>(key, v);
  else if (key == "num_accels") c.num_accels = parse_number<int>(key, v);
  else if (key == "clock_mhz") c.clock_mhz = parse_number<double>(key, v);
  else if (key == "cycles_per_element") c.cycles_per_element = parse_number<double>(key, v);
  else if (key == "dma_startup_us") c.dma_startup_us = parse_number<double>(key, v);
  else if (key == "bandwidth_gbps") c.bandwidth_gbps = parse_number<double>(key, v);
  else if (key == "latency_us") c.latency_us = parse_number<double>(key, v);
  else if (key == "malicious") c.malicious = parse_bool(key, v);
  else if (key == "masking") c.masking = parse_bool(key, v);
  else if (key == "batched_hash") c.batched_hash = parse_bool(key, v);
  else if (key == "key_file") c.key_file = v;
  else if (key == "fabric_timeout_s") c.fabric_timeout_s = parse_number<double>(key, v);
  else if (key == "transport") {
    if (v == "sockets") c.transport = TransportKind::kSockets;
    else if (v == "simulated" || v == "sim") c.transport = TransportKind::kSimulated;
    else throw ConfigError("transport: expected sockets or simulated, got '" + v + "'");
  } else
    throw ConfigError("unknown config key '" + key + "'");
}

inline std::string json_scalar(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
  if (j.is_array()) {
    std::string out;
    for (std::size_t i = 0; i < j.size(); ++i) out += (i ? "," : "") + json_scalar(j[i]);
    return out;
  }
  return j.dump();
}

}  // namespace detail

inline PartyConfig parse_config(const std::string& text) {
  PartyConfig c;
  const auto body = detail::trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed JSON config: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("JSON config must be an object");
    for (const auto& [k, v] : j.items()) detail::apply_key(c, k, detail::json_scalar(v));
  } else {
    std::istringstream in(text);
    int line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
      detail::apply_key(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
  }
  c.validate();
  return c;
}

inline PartyConfig load_config(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

inline std::string to_config_text(const PartyConfig& c) {
  std::ostringstream o;
  o << "party_id = " << c.party_id << "\npeers = ";
  for (int q = 0; q < kParties; ++q) o << (q ? "," : "") << c.peers[q].str();
  o << "\nmemory_size = " << c.memory_size << "\nbatch_slots = " << c.batch_slots << "\nnum_accels = " << c.num_accels
    << "\nclock_mhz = " << c.clock_mhz << "\ncycles_per_element = " << c.cycles_per_element << "\ndma_startup_us = " << c.dma_startup_us
    << "\nbandwidth_gbps = " << c.bandwidth_gbps << "\nlatency_us = " << c.latency_us << "\nmalicious = " << (c.malicious ? "true" : "false")
    << "\nmasking = " << (c.masking ? "true" : "false") << "\nbatched_hash = " << (c.batched_hash ? "true" : "false")
    << "\nkey_file = " << c.key_file << "\ntransport = " << (c.transport == TransportKind::kSockets ? "sockets" : "simulated")
    << "\nfabric_timeout_s = " << c.fabric_timeout_s << "\n";
  return o.str();
}

// Checks a set of four configurations describing one deployment.
inline void validate_cluster(const std::array<PartyConfig, kParties>& cfgs) {
  std::array<bool, kParties> seen{};
  for (const auto& c : cfgs) {
    c.validate();
    if (seen[c.party_id]) throw ConfigError("duplicate party_id " + std::to_string(c.party_id));
    seen[c.party_id] = true;
  }
  for (const auto& c : cfgs) {
    if (c.memory_size != cfgs[0].memory_size || c.batch_slots != cfgs[0].batch_slots)
      throw ConfigError("all parties must share memory_size and batch_slots");
    if (c.transport == TransportKind::kSockets && c.peers != cfgs[0].peers) throw ConfigError("peer lists differ between parties");
  }
}

}  // namespace copa
