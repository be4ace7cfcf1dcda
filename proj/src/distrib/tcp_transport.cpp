// Copyright 2026 The Loomflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <thread>

#include "loomflow/errors.h"
#include "loomflow/transport.h"

namespace loomflow {

namespace {

Error socket_error(const std::string& what) {
  return Error(ErrorCode::kTransportClosed, what + ": " + std::strerror(errno));
}

bool write_all(int fd, const std::byte* data, std::size_t size) {
  while (size > 0) {
    const ssize_t n = ::send(fd, data, size, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data += n;
    size -= static_cast<std::size_t>(n);
  }
  return true;
}

bool read_all(int fd, std::byte* data, std::size_t size) {
  while (size > 0) {
    const ssize_t n = ::recv(fd, data, size, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data += n;
    size -= static_cast<std::size_t>(n);
  }
  return true;
}

class TcpTransport : public Transport {
 public:
  ~TcpTransport() override { close(nullptr); }

  void open(const std::vector<std::string>& devices) override {
    for (const auto& d : devices) {
      auto ep = std::make_unique<Endpoint>();
      ep->listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (ep->listen_fd < 0) throw socket_error("socket");
      sockaddr_in addr{};
      addr.sin_family = AF_INET;
      addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
      addr.sin_port = 0;
      if (::bind(ep->listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) throw socket_error("bind");
      if (::listen(ep->listen_fd, 64) != 0) throw socket_error("listen");
      socklen_t len = sizeof(addr);
      ::getsockname(ep->listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
      ep->port = ntohs(addr.sin_port);
      Endpoint* raw = ep.get();
      endpoints_[d] = std::move(ep);
      raw->acceptor = std::thread([this, raw] { accept_loop(*raw); });
    }
  }

  void send(const std::string& from, const std::string& to, const std::string& key,
            const std::optional<Tensor>& value) override {
    const Bytes body = encode_message(key, value);
    Bytes frame;
    const auto len = static_cast<std::uint32_t>(body.size());
    for (int shift = 24; shift >= 0; shift -= 8) frame.push_back(static_cast<std::byte>((len >> shift) & 0xff));
    frame.insert(frame.end(), body.begin(), body.end());

    Connection& conn = connection(from, to);
    std::lock_guard<std::mutex> lock(conn.mu);
    if (!write_all(conn.fd, frame.data(), frame.size())) throw socket_error("send to " + to);
    std::lock_guard<std::mutex> stats_lock(mu_);
    ++stats_.messages;
    stats_.bytes += frame.size();
  }

  void recv(const std::string& device, const std::string& key, Mailbox::Callback done) override {
    endpoint(device).box.take(key, std::move(done));
  }

  void close(std::exception_ptr reason) override {
    if (closed_.exchange(true)) return;
    std::vector<std::thread> readers;
    {
      std::lock_guard<std::mutex> lock(mu_);
      for (auto& [pair, conn] : connections_) ::shutdown(conn->fd, SHUT_RDWR);
      for (auto& [d, ep] : endpoints_) ::shutdown(ep->listen_fd, SHUT_RDWR);
    }
    for (auto& [d, ep] : endpoints_) {
      if (ep->acceptor.joinable()) ep->acceptor.join();
    }
    {
      std::lock_guard<std::mutex> lock(mu_);
      readers.swap(readers_);
    }
    for (auto& t : readers) t.join();
    for (auto& [pair, conn] : connections_) ::close(conn->fd);
    for (int fd : accepted_) ::close(fd);
    for (auto& [d, ep] : endpoints_) {
      ::close(ep->listen_fd);
      ep->box.close(reason);
    }
  }

  TransportStats stats() const override {
    std::lock_guard<std::mutex> lock(mu_);
    TransportStats s = stats_;
    for (const auto& [d, ep] : endpoints_) {
      s.undelivered += ep->box.unclaimed();
      s.duplicate_keys += ep->box.duplicates();
    }
    return s;
  }

 private:
  struct Endpoint {
    int listen_fd = -1;
    std::uint16_t port = 0;
    Mailbox box;
    std::thread acceptor;
  };
  struct Connection {
    int fd = -1;
    std::mutex mu;
  };

  Endpoint& endpoint(const std::string& device) {
    auto it = endpoints_.find(device);
    if (it == endpoints_.end()) throw Error(ErrorCode::kUnknownDevice, "no endpoint for device " + device);
    return *it->second;
  }

  Connection& connection(const std::string& from, const std::string& to) {
    std::lock_guard<std::mutex> lock(mu_);
    auto& slot = connections_[{from, to}];
    if (slot) return *slot;
    const Endpoint& dst = endpoint(to);
    auto conn = std::make_unique<Connection>();
    conn->fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (conn->fd < 0) throw socket_error("socket");
    const int one = 1;
    ::setsockopt(conn->fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(dst.port);
    if (::connect(conn->fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(conn->fd);
      throw socket_error("connect to " + to);
    }
    slot = std::move(conn);
    return *slot;
  }

  void accept_loop(Endpoint& ep) {
    for (;;) {
      const int fd = ::accept(ep.listen_fd, nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR) continue;
        return;
      }
      std::lock_guard<std::mutex> lock(mu_);
      if (closed_) {
        ::close(fd);
        return;
      }
      accepted_.push_back(fd);
      readers_.emplace_back([this, fd, &ep] { read_loop(fd, ep); });
    }
  }

  void read_loop(int fd, Endpoint& ep) {
    for (;;) {
      std::byte header[4];
      if (!read_all(fd, header, sizeof(header))) return;
      std::uint32_t len = 0;
      for (std::byte b : header) len = (len << 8) | std::to_integer<std::uint32_t>(b);
      Bytes body(len);
      if (!read_all(fd, body.data(), body.size())) return;
      try {
        std::string key;
        std::optional<Tensor> value;
        decode_message(body, &key, &value);
        ep.box.deliver(key, std::move(value));
      } catch (...) {
        ep.box.close(std::current_exception());
        return;
      }
    }
  }

  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Endpoint>> endpoints_;
  std::map<std::pair<std::string, std::string>, std::unique_ptr<Connection>> connections_;
  std::vector<int> accepted_;
  std::vector<std::thread> readers_;
  std::atomic<bool> closed_{false};
  TransportStats stats_;
};

}  // namespace

std::unique_ptr<Transport> make_tcp_transport() { return std::make_unique<TcpTransport>(); }

}  // namespace loomflow
