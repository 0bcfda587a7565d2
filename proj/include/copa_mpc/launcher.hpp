#pragma once

// Localhost socket deployment: writes keys and configs for four parties,
// starts parties 1..3 as headless `node` processes of the given executable,
// and runs party 0 in-process as the initiator.

#include <netinet/in.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include "copa_mpc/bench.hpp"
#include "copa_mpc/config.hpp"

extern char** environ;

namespace copa {

// Ephemeral ports the kernel currently considers free.
inline std::array<std::uint16_t, kParties> pick_free_ports() {
  std::array<std::uint16_t, kParties> ports{};
  std::array<int, kParties> fds{};
  for (int i = 0; i < kParties; ++i) {
    fds[i] = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    if (fds[i] < 0 || ::bind(fds[i], reinterpret_cast<sockaddr*>(&a), sizeof a) != 0) throw FabricError("cannot reserve a local port");
    socklen_t len = sizeof a;
    ::getsockname(fds[i], reinterpret_cast<sockaddr*>(&a), &len);
    ports[i] = ntohs(a.sin_port);
  }
  for (int fd : fds) ::close(fd);
  return ports;
}

struct Deployment {
  std::filesystem::path dir;
  std::array<PartyConfig, kParties> configs;
  std::array<std::filesystem::path, kParties> config_paths;
};

// Keys (party{p}.key) and configs (party{p}.conf) for a localhost run.
inline Deployment write_local_deployment(const std::filesystem::path& dir, const BenchOptions& opt, const BatchPlan& plan) {
  std::filesystem::create_directories(dir);
  const auto sys = opt.seed ? seeded_system_keys(*opt.seed) : fresh_system_keys();
  const auto keys = allocate_keys(sys);
  const auto ports = pick_free_ports();
  Deployment d;
  d.dir = dir;
  for (int p = 0; p < kParties; ++p) {
    auto& c = d.configs[p];
    c.party_id = p;
    for (int q = 0; q < kParties; ++q) c.peers[q] = Endpoint{"127.0.0.1", ports[q]};
    c.memory_size = plan.memory_size;
    c.batch_slots = plan.batch_slots;
    c.num_accels = opt.accels;
    c.clock_mhz = opt.cost.clock_mhz;
    c.cycles_per_element = opt.cost.cycles_per_element;
    c.dma_startup_us = opt.cost.dma_startup_us;
    c.malicious = opt.mode.malicious;
    c.masking = opt.mode.masking;
    c.batched_hash = opt.mode.batched_hash;
    c.key_file = key_file_name(dir, p).string();
    c.transport = TransportKind::kSockets;
    c.fabric_timeout_s = 120;
    write_file_bytes(c.key_file, encode_key_file(keys[p]));
    d.config_paths[p] = dir / ("party" + std::to_string(p) + ".conf");
    const auto text = to_config_text(c);
    write_file_bytes(d.config_paths[p], std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  validate_cluster(d.configs);
  return d;
}

class ChildProcess {
 public:
  ChildProcess(const std::string& exe, const std::vector<std::string>& args) {
    std::vector<char*> argv;
    std::vector<std::string> all{exe};
    all.insert(all.end(), args.begin(), args.end());
    for (auto& s : all) argv.push_back(s.data());
    argv.push_back(nullptr);
    if (::posix_spawn(&pid_, exe.c_str(), nullptr, nullptr, argv.data(), environ) != 0) throw std::runtime_error("cannot start " + exe);
  }
  ~ChildProcess() { reap(5.0); }

  ChildProcess(const ChildProcess&) = delete;
  ChildProcess& operator=(const ChildProcess&) = delete;

  // Waits up to `grace_s` for exit, then kills. Returns the exit status (-1 if killed).
  int reap(double grace_s) {
    if (pid_ <= 0) return status_;
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(grace_s));
    int st = 0;
    for (;;) {
      const pid_t r = ::waitpid(pid_, &st, WNOHANG);
      if (r == pid_) {
        status_ = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
        pid_ = 0;
        return status_;
      }
      if (std::chrono::steady_clock::now() > deadline) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &st, 0);
    pid_ = 0;
    status_ = -1;
    return status_;
  }

 private:
  pid_t pid_ = 0;
  int status_ = -1;
};

struct SocketRunResult {
  BenchResult bench;
  std::array<int, kParties - 1> child_exit{};
  double setup_s = 0;  // until all four nodes were connected
};

// `exe` must accept `node --config <path> --headless`.
inline SocketRunResult run_socket_bench(const std::string& exe, const std::filesystem::path& dir, const BenchOptions& opt) {
  const auto plan = BatchPlan::make(opt.batch, opt.accels, opt.mode);
  const auto dep = write_local_deployment(dir, opt, plan);
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::unique_ptr<ChildProcess>> children;
  for (int p = 1; p < kParties; ++p)
    children.push_back(std::make_unique<ChildProcess>(exe, std::vector<std::string>{"node", "--config", dep.config_paths[p].string(), "--headless"}));
  SocketRunResult out;
  {
    SocketNode initiator(dep.configs[0], load_key_file(0, dep.configs[0].key_file));
    out.setup_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.bench = run_socket_initiator(initiator, opt, plan);
  }
  for (int i = 0; i < kParties - 1; ++i) out.child_exit[i] = children[i]->reap(10.0);
  return out;
}

}  // namespace copa
