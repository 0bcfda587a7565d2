// copa: key generation, offline dealing, benchmarks, saturation arithmetic,
// and the party daemon.
//
// Exit codes: 0 ok, 2 verification or abort failure, 3 configuration error.

#include <unistd.h>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "copa_mpc/bench.hpp"
#include "copa_mpc/cluster.hpp"
#include "copa_mpc/config.hpp"
#include "copa_mpc/launcher.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailed = 2;
constexpr int kExitConfig = 3;

std::string self_exe() {
  std::error_code ec;
  auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (ec) throw std::runtime_error("cannot locate own executable");
  return p.string();
}

std::vector<std::uint64_t> parse_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc{} || end != item.data() + item.size() || v == 0) throw copa::ConfigError("bad batch size '" + item + "' in sweep");
    out.push_back(v);
  }
  if (out.empty()) throw copa::ConfigError("empty sweep");
  return out;
}

int cmd_keygen(const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  const auto keys = copa::allocate_keys(copa::fresh_system_keys());
  for (int p = 0; p < copa::kParties; ++p) {
    const auto path = copa::key_file_name(out_dir, p);
    copa::write_file_bytes(path, copa::encode_key_file(keys[p]));
    std::cout << path.string() << "\n";
  }
  return kExitOk;
}

// Offline dealing: party{p}.shares holds party p's 48-byte record per secret.
int cmd_deal(const std::string& secrets_text, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  std::vector<copa::RingElement> secrets;
  std::stringstream ss(secrets_text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    try {
      secrets.push_back(copa::parse_ring(item));
    } catch (const std::exception& e) {
      throw copa::ConfigError("bad secret '" + item + "': " + e.what());
    }
  }
  std::array<std::vector<std::uint8_t>, copa::kParties> files;
  auto emit = [&](auto& rng) {
    for (const auto& s : secrets) {
      const auto d = copa::deal(s, rng);
      for (int p = 0; p < copa::kParties; ++p) {
        std::array<std::uint8_t, copa::kShareRecordBytes> rec{};
        copa::view_of(d, p).store(rec);
        files[p].insert(files[p].end(), rec.begin(), rec.end());
      }
    }
  };
  if (seed) {
    copa::SeededRandomness r(*seed);
    emit(r);
  } else {
    copa::SystemRandomness r;
    emit(r);
  }
  std::filesystem::create_directories(out_dir);
  for (int p = 0; p < copa::kParties; ++p) {
    const auto path = std::filesystem::path(out_dir) / ("party" + std::to_string(p) + ".shares");
    copa::write_file_bytes(path, files[p]);
    std::cout << path.string() << " " << secrets.size() << " records\n";
  }
  return kExitOk;
}

int cmd_saturate(double link, double clock, double cpe) {
  copa::AccelCostModel m;
  m.clock_mhz = clock;
  m.cycles_per_element = cpe;
  try {
    std::cout << copa::to_text(copa::saturation_report(link, m));
  } catch (const std::exception& e) {
    throw copa::ConfigError(e.what());
  }
  return kExitOk;
}

struct BenchArgs {
  std::uint64_t batch = 1024;
  std::string mode = "base";
  std::string transport = "sim";
  int accels = 1;
  std::string sweep;
  std::string report;
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string workdir;
};

int cmd_bench(const BenchArgs& a) {
  copa::BenchOptions opt;
  try {
    opt.mode = copa::parse_mode(a.mode);
  } catch (const std::exception& e) {
    throw copa::ConfigError(e.what());
  }
  opt.accels = a.accels;
  opt.seed = a.seed;
  if (!a.config.empty()) {
    // Cost-model and link knobs come from a party config when given.
    const auto cfg = copa::load_config(a.config);
    opt.cost = cfg.cost();
    opt.link = cfg.link();
    opt.mode.batched_hash = cfg.batched_hash;
    opt.mode.masking = cfg.masking;
  }
  if (opt.accels < 1) throw copa::ConfigError("--accels must be at least 1");
  const auto batches = a.sweep.empty() ? std::vector<std::uint64_t>{a.batch} : parse_list(a.sweep);

  std::vector<copa::BenchRow> rows;
  bool failed = false;
  for (auto n : batches) {
    opt.batch = n;
    copa::BenchResult r;
    if (a.transport == "sim") {
      r = copa::run_sim_bench(opt);
    } else if (a.transport == "sockets") {
      auto dir = a.workdir.empty() ? std::filesystem::temp_directory_path() / ("copa-bench-" + std::to_string(::getpid())) : std::filesystem::path(a.workdir);
      auto run = copa::run_socket_bench(self_exe(), dir, opt);
      r = std::move(run.bench);
      for (int code : run.child_exit)
        if (code != 0) {
          std::cerr << "a headless node exited with status " << code << "\n";
          failed = true;
        }
      if (a.workdir.empty()) std::filesystem::remove_all(dir);
    } else {
      throw copa::ConfigError("--transport must be sim or sockets");
    }
    if (r.mismatches != 0) {
      std::cerr << "verification failed: " << r.mismatches << " of " << n << " products do not match the plaintext oracle\n";
      return kExitFailed;
    }
    if (r.row.aborts != 0) failed = true;
    rows.push_back(r.row);
  }
  std::cout << copa::to_csv(rows);
  if (!a.report.empty()) {
    const auto [csv, json] = copa::write_reports(rows, a.report);
    std::cerr << "wrote " << csv.string() << " and " << json.string() << "\n";
  }
  return failed ? kExitFailed : kExitOk;
}

int cmd_node(const std::string& config_path, bool headless) {
  const auto cfg = copa::load_config(config_path);
  copa::KeyMaterial keys;
  try {
    keys = copa::load_key_file(cfg.party_id, cfg.key_file);
  } catch (const std::exception& e) {
    throw copa::ConfigError(e.what());
  }
  if (cfg.transport != copa::TransportKind::kSockets)
    throw copa::ConfigError("node needs transport = sockets; simulated parties run inside `bench --transport sim`");
  copa::SocketNode sn(cfg, std::move(keys), cfg.fabric_timeout_s);
  std::cerr << "party " << cfg.party_id << " connected" << (headless ? " (headless)" : "") << "\n";
  // Without --headless the node still only serves peers; commands arrive as triggers.
  sn.run_headless();
  const auto aborts = sn.node().aborts();
  for (const auto& ab : aborts)
    std::cerr << "abort on batch " << ab.batch_id << " raised by party " << ab.from << " element " << ab.info.element << "\n";
  return aborts.empty() ? kExitOk : kExitFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"copa: four-party MPC over a modeled lookaside accelerator fabric"};
  app.require_subcommand(1);

  std::string key_dir;
  auto* keygen = app.add_subcommand("keygen", "write four party key files");
  keygen->add_option("--out", key_dir, "output directory")->required();

  std::string secrets, deal_dir;
  std::optional<std::uint64_t> deal_seed;
  auto* deal = app.add_subcommand("deal", "share secrets offline into per-party share files");
  deal->add_option("--secrets", secrets, "comma-separated ring elements (decimal or 0x hex)")->required();
  deal->add_option("--out", deal_dir, "output directory")->required();
  deal->add_option("--seed", deal_seed, "deterministic dealing randomness");

  BenchArgs b;
  auto* bench = app.add_subcommand("bench", "run oracle-checked multiply batches");
  bench->add_option("--batch", b.batch, "multiplies per batch")->check(CLI::PositiveNumber);
  bench->add_option("--mode", b.mode, "base or malicious");
  bench->add_option("--transport", b.transport, "sim or sockets");
  bench->add_option("--accels", b.accels, "accelerator instances per party");
  bench->add_option("--sweep", b.sweep, "comma-separated batch sizes");
  bench->add_option("--report", b.report, "report path; .csv and .json are written");
  bench->add_option("--seed", b.seed, "deterministic inputs, keys and dealing");
  bench->add_option("--config", b.config, "party config supplying cost-model and link knobs");
  bench->add_option("--workdir", b.workdir, "keep socket-run keys and configs here");

  double link = 100, clock = 275, cpe = 2;
  auto* saturate = app.add_subcommand("saturate", "accelerators needed to fill a link");
  saturate->add_option("--link", link, "link rate, Gb/s");
  saturate->add_option("--clock", clock, "accelerator clock, MHz");
  saturate->add_option("--cpe", cpe, "cycles per element");

  std::string node_config;
  bool headless = false;
  auto* node = app.add_subcommand("node", "run a party daemon over sockets");
  node->add_option("--config", node_config, "party config file")->required();
  node->add_flag("--headless", headless, "serve triggers only");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*keygen) return cmd_keygen(key_dir);
    if (*deal) return cmd_deal(secrets, deal_dir, deal_seed);
    if (*bench) return cmd_bench(b);
    if (*saturate) return cmd_saturate(link, clock, cpe);
    if (*node) return cmd_node(node_config, headless);
  } catch (const copa::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const copa::CommandError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
