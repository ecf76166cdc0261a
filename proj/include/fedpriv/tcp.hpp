// Copyright 2026 The fedpriv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <functional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedpriv/error.hpp"
#include "fedpriv/federation.hpp"
#include "fedpriv/wire.hpp"

// TCP transport for the federation protocol: one ordered byte stream per
// worker carrying length-prefixed frames. No TLS.
namespace fedpriv::tcp {

using Clock = std::chrono::steady_clock;

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

// Parses "host:port".
inline Endpoint parse_endpoint(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw Error(ErrorCode::kInvalidArgument, "address must be host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  char* end = nullptr;
  const unsigned long v = std::strtoul(port.c_str(), &end, 10);
  if (*end != '\0' || v > 65535) throw Error(ErrorCode::kInvalidArgument, "bad port '" + port + "'");
  ep.port = static_cast<std::uint16_t>(v);
  return ep;
}

namespace detail {

inline sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || !res) {
    throw Error(ErrorCode::kTransportError, "cannot resolve host " + ep.host);
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

inline int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
  return left.count() < 0 ? 0 : static_cast<int>(left.count());
}

inline void wait_readable(int fd, Clock::time_point deadline) {
  for (;;) {
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return;
    if (rc == 0) throw Error(ErrorCode::kTimedOut, "timed out waiting for peer");
    if (errno != EINTR) throw Error(ErrorCode::kTransportError, std::strerror(errno));
  }
}

inline void send_all(int fd, std::span<const std::uint8_t> data) {
  while (!data.empty()) {
    const ssize_t n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kTransportError, std::string("send: ") + std::strerror(errno));
    }
    data = data.subspan(static_cast<std::size_t>(n));
  }
}

inline void recv_exact(int fd, std::span<std::uint8_t> out, Clock::time_point deadline) {
  while (!out.empty()) {
    wait_readable(fd, deadline);
    const ssize_t n = ::recv(fd, out.data(), out.size(), 0);
    if (n == 0) throw Error(ErrorCode::kTransportError, "connection closed by peer");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kTransportError, std::string("recv: ") + std::strerror(errno));
    }
    out = out.subspan(static_cast<std::size_t>(n));
  }
}

}  // namespace detail

struct ReceivedFrame {
  wire::Message message;
  std::size_t payload_bytes;
};

inline void send_message(const Socket& s, const wire::Message& msg) {
  const auto frame = wire::encode(msg);
  detail::send_all(s.fd(), frame);
}

inline ReceivedFrame recv_message(const Socket& s, std::chrono::milliseconds timeout) {
  const auto deadline = Clock::now() + timeout;
  std::uint8_t header[wire::kHeaderSize];
  detail::recv_exact(s.fd(), header, deadline);
  const auto h = wire::decode_header(header);
  std::vector<std::uint8_t> payload(h.payload_length);
  detail::recv_exact(s.fd(), payload, deadline);
  return {wire::decode_payload(h.type, payload), payload.size()};
}

inline Socket listen_on(const Endpoint& ep, int backlog) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw Error(ErrorCode::kTransportError, "socket() failed");
  const int one = 1;
  ::setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const sockaddr_in addr = detail::resolve(ep);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    throw Error(ErrorCode::kTransportError,
                "cannot bind " + ep.host + ":" + std::to_string(ep.port) + ": " + std::strerror(errno));
  }
  if (::listen(s.fd(), backlog) != 0) {
    throw Error(ErrorCode::kTransportError, std::string("listen: ") + std::strerror(errno));
  }
  return s;
}

inline std::uint16_t local_port(const Socket& s) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(s.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  return ntohs(addr.sin_port);
}

inline Socket accept_one(const Socket& listener, std::chrono::milliseconds timeout) {
  detail::wait_readable(listener.fd(), Clock::now() + timeout);
  Socket s(::accept(listener.fd(), nullptr, nullptr));
  if (!s.valid()) throw Error(ErrorCode::kTransportError, std::string("accept: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

// Retries until the coordinator is listening or the timeout elapses.
inline Socket connect_to(const Endpoint& ep, std::chrono::milliseconds timeout) {
  const sockaddr_in addr = detail::resolve(ep);
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    Socket s(::socket(AF_INET, SOCK_STREAM, 0));
    if (!s.valid()) throw Error(ErrorCode::kTransportError, "socket() failed");
    if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) == 0) {
      const int one = 1;
      ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return s;
    }
    if (Clock::now() >= deadline) {
      throw Error(ErrorCode::kTransportError,
                  "cannot connect to " + ep.host + ":" + std::to_string(ep.port));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

struct CoordinatorOptions {
  Endpoint listen;
  std::chrono::milliseconds timeout{60'000};
  // Called once the socket is bound, with the actual port (useful with port 0).
  std::function<void(std::uint16_t)> on_listening;
};

inline wire::AbortReason reason_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kTimedOut: return wire::AbortReason::kTimedOut;
    case ErrorCode::kDecodeError: return wire::AbortReason::kDecodeError;
    default: return wire::AbortReason::kTransportError;
  }
}

struct CoordinatorRun {
  CoordinatorSummary summary;
  std::vector<TranscriptEntry> transcript;
};

// Accepts n_workers connections, then services the round barrier. Worker
// streams are read in ascending worker order each round; the barrier needs
// one message from every worker anyway. Bind failures throw TransportError;
// everything after that ends in a summary (aborted or not).
inline CoordinatorRun run_coordinator(const SessionConfig& cfg, const CoordinatorOptions& opts) {
  CoordinatorMachine machine(cfg);
  Socket listener = listen_on(opts.listen, static_cast<int>(cfg.n_workers));
  if (opts.on_listening) opts.on_listening(local_port(listener));

  std::vector<Socket> conns(cfg.n_workers);
  auto deliver = [&](std::vector<Outgoing> out) {
    for (const auto& o : out) {
      if (o.worker_id >= conns.size() || !conns[o.worker_id].valid()) continue;
      try {
        send_message(conns[o.worker_id], o.message);
      } catch (const Error&) {
        if (!machine.finished()) throw;
      }
    }
  };

  try {
    std::vector<Socket> unassigned;
    for (std::uint32_t i = 0; i < cfg.n_workers; ++i) {
      Socket s = accept_one(listener, opts.timeout);
      ReceivedFrame f = recv_message(s, opts.timeout);
      const auto* hello = std::get_if<wire::Hello>(&f.message);
      if (hello && hello->worker_id < cfg.n_workers && !conns[hello->worker_id].valid()) {
        const std::uint32_t id = hello->worker_id;
        conns[id] = std::move(s);
        deliver(machine.handle(id, f.message, f.payload_bytes));
      } else {
        unassigned.push_back(std::move(s));
        deliver(machine.abort(wire::AbortReason::kProtocolError, "bad or duplicate HELLO"));
        for (auto& u : unassigned) {
          try {
            send_message(u, wire::Abort{wire::AbortReason::kProtocolError, "bad or duplicate HELLO"});
          } catch (const Error&) {
          }
        }
        break;
      }
    }
    while (!machine.finished()) {
      for (std::uint32_t w = 0; w < cfg.n_workers && !machine.finished(); ++w) {
        if (!machine.expecting(w)) continue;
        ReceivedFrame f = recv_message(conns[w], opts.timeout);
        deliver(machine.handle(w, f.message, f.payload_bytes));
      }
    }
  } catch (const Error& e) {
    deliver(machine.abort(reason_for(e), e.what()));
  }
  return {machine.summary(), machine.transcript()};
}

struct WorkerOptions {
  Endpoint connect;
  std::chrono::milliseconds timeout{60'000};
};

// Runs one worker to completion. Transport problems end the run with an
// aborted result; the ledger keeps every release already sent.
inline WorkerResult run_worker(WorkerSetup setup, const WorkerOptions& opts) {
  WorkerMachine machine(std::move(setup));
  try {
    Socket s = connect_to(opts.connect, opts.timeout);
    send_message(s, machine.start());
    while (!machine.finished()) {
      ReceivedFrame f = recv_message(s, opts.timeout);
      for (const auto& reply : machine.handle(f.message)) send_message(s, reply);
    }
  } catch (const Error& e) {
    machine.fail(reason_for(e), e.what());
  }
  return machine.take_result();
}

}  // namespace fedpriv::tcp
