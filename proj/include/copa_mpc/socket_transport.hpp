#pragma once

// TCP transport: one duplex stream per unordered party pair. Party p listens
// on its own endpoint, connects to every q < p and accepts every q > p, so
// setup order follows party index. A 8-byte hello (magic, party id) names the
// connecting side. Each stream has a reader thread that posts frames onto the
// runtime in arrival order; writers serialise per stream.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "copa_mpc/transport.hpp"

namespace copa {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

inline Endpoint parse_endpoint(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) throw FabricError("endpoint must be host:port, got '" + s + "'");
  Endpoint e;
  e.host = s.substr(0, colon);
  const auto port_text = s.substr(colon + 1);
  std::size_t used = 0;
  unsigned long port = 0;
  try {
    port = std::stoul(port_text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != port_text.size() || port == 0 || port > 65535) throw FabricError("bad port in endpoint '" + s + "'");
  e.port = static_cast<std::uint16_t>(port);
  return e;
}

namespace detail {

inline void write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t w = ::send(fd, p, n, MSG_NOSIGNAL);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw FabricError(std::string("socket write failed: ") + std::strerror(errno));
    }
    p += w;
    n -= static_cast<std::size_t>(w);
  }
}

// False on clean EOF before any byte.
inline bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd, p + got, n - got, 0);
    if (r == 0) {
      if (got == 0) return false;
      throw FabricError("socket closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw FabricError(std::string("socket read failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

inline sockaddr_in resolve(const Endpoint& e) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(e.host.c_str(), nullptr, &hints, &res) != 0 || !res) throw FabricError("cannot resolve host " + e.host);
  sockaddr_in addr{};
  std::memcpy(&addr, res->ai_addr, sizeof addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(e.port);
  return addr;
}

inline void tune(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  int buf = 4 << 20;
  ::setsockopt(fd, SOL_SOCKET, SO_SNDBUF, &buf, sizeof buf);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &buf, sizeof buf);
}

}  // namespace detail

class SocketTransport final : public Transport {
 public:
  SocketTransport(PartyId self, std::array<Endpoint, kParties> peers) : self_(self), peers_(std::move(peers)) {
    check_party(self);
    for (int a = 0; a < kParties; ++a)
      for (int b = a + 1; b < kParties; ++b)
        if (peers_[a] == peers_[b]) throw FabricError("duplicate endpoint " + peers_[a].str());
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw FabricError("socket() failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr = detail::resolve(peers_[self]);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
      const std::string why = std::strerror(errno);
      ::close(listen_fd_);
      throw FabricError("cannot bind " + peers_[self].str() + ": " + why);
    }
    if (::listen(listen_fd_, kParties) != 0) {
      ::close(listen_fd_);
      throw FabricError("listen failed on " + peers_[self].str());
    }
  }

  ~SocketTransport() override { shutdown(); }

  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  // Must be called once, after attach(). Blocks until all three peers are connected.
  void connect(double timeout_s = 30.0) {
    if (!handler_) throw FabricError("attach an endpoint before connecting");
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration_cast<std::chrono::steady_clock::duration>(std::chrono::duration<double>(timeout_s));
    for (int q = 0; q < self_; ++q) dial(q, deadline);
    for (int k = self_ + 1; k < kParties; ++k) accept_one(deadline);
    for (int q = 0; q < kParties; ++q)
      if (q != self_) readers_.emplace_back([this, q] { read_loop(q); });
  }

  void attach(PartyId party, Runtime& rt, Handler handler) override {
    if (party != self_) throw FabricError("socket transport serves party " + std::to_string(self_) + " only");
    rt_ = &rt;
    handler_ = std::move(handler);
  }

  void send(WireMessage m) override {
    if (m.dst >= kParties || m.dst == self_) throw FabricError("send: bad destination");
    auto& c = conns_[m.dst];
    if (c.fd < 0) throw FabricError("no connection to party " + std::to_string(m.dst));
    const auto frame = encode(m);
    std::lock_guard<std::mutex> g(c.write_mu);
    detail::write_all(c.fd, frame.data(), frame.size());
  }

  // Set once any peer stream has closed or failed.
  bool peer_closed() const { return peer_closed_.load(); }

  void shutdown() {
    if (stopped_.exchange(true)) return;
    for (auto& c : conns_)
      if (c.fd >= 0) ::shutdown(c.fd, SHUT_RDWR);
    for (auto& t : readers_)
      if (t.joinable()) t.join();
    for (auto& c : conns_)
      if (c.fd >= 0) ::close(c.fd);
    if (listen_fd_ >= 0) ::close(listen_fd_);
  }

 private:
  static constexpr std::size_t kHelloBytes = 8;

  struct Conn {
    int fd = -1;
    std::mutex write_mu;
  };

  void dial(int q, std::chrono::steady_clock::time_point deadline) {
    const sockaddr_in addr = detail::resolve(peers_[q]);
    for (;;) {
      const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) throw FabricError("socket() failed");
      if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) {
        detail::tune(fd);
        std::array<std::uint8_t, kHelloBytes> hello{};
        detail::put_u32(hello, 0, kWireMagic);
        detail::put_u32(hello, 4, static_cast<std::uint32_t>(self_));
        detail::write_all(fd, hello.data(), hello.size());
        conns_[q].fd = fd;
        return;
      }
      ::close(fd);
      if (std::chrono::steady_clock::now() > deadline) throw FabricError("cannot connect to party " + std::to_string(q) + " at " + peers_[q].str());
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

  void accept_one(std::chrono::steady_clock::time_point deadline) {
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::seconds>(deadline - std::chrono::steady_clock::now()).count();
      if (left < 0) throw FabricError("timed out waiting for peers to connect");
      timeval tv{static_cast<time_t>(left + 1), 0};
      ::setsockopt(listen_fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR || errno == EAGAIN || errno == EWOULDBLOCK) continue;
        throw FabricError(std::string("accept failed: ") + std::strerror(errno));
      }
      detail::tune(fd);
      std::array<std::uint8_t, kHelloBytes> hello{};
      if (!detail::read_all(fd, hello.data(), hello.size()) || detail::get_u32(hello, 0) != kWireMagic) {
        ::close(fd);
        continue;
      }
      const auto q = static_cast<int>(detail::get_u32(hello, 4));
      if (q <= self_ || q >= kParties || conns_[q].fd >= 0) {
        ::close(fd);
        throw FabricError("unexpected hello from party " + std::to_string(q));
      }
      conns_[q].fd = fd;
      return;
    }
  }

  void read_loop(int q) {
    const int fd = conns_[q].fd;
    try {
      for (;;) {
        std::array<std::uint8_t, kHeaderBytes> head{};
        if (!detail::read_all(fd, head.data(), head.size())) break;
        WireMessage m = decode_header(head);
        if (m.src != q) throw FabricError("frame on link from " + std::to_string(q) + " claims source " + std::to_string(m.src));
        m.payload.resize(body_bytes(m));
        if (!m.payload.empty() && !detail::read_all(fd, m.payload.data(), m.payload.size())) throw FabricError("socket closed mid-frame");
        rt_->post([h = &handler_, msg = std::move(m)]() mutable { (*h)(std::move(msg)); });
      }
    } catch (const std::exception& e) {
      if (!stopped_) rt_->trace(std::string("link from ") + std::to_string(q) + " failed: " + e.what());
    }
    peer_closed_ = true;
    rt_->post([] {});  // wake waiters so they can observe the closed link
  }

  PartyId self_;
  std::array<Endpoint, kParties> peers_;
  int listen_fd_ = -1;
  std::array<Conn, kParties> conns_{};
  std::vector<std::thread> readers_;
  Runtime* rt_ = nullptr;
  Handler handler_;
  std::atomic<bool> peer_closed_{false};
  std::atomic<bool> stopped_{false};
};

}  // namespace copa
