#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <string>

#include "dynarace/protocol.hpp"

namespace dynarace {

// Owning POSIX socket descriptor.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  ~Socket() { close(); }
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close();
  // Unblocks any thread waiting on this socket.
  void shutdown();

 private:
  int fd_ = -1;
};

class Listener {
 public:
  // port 0 binds an ephemeral port.
  Listener(const std::string& host, int port);
  int port() const { return port_; }
  // Returns an invalid socket once shutdown() was called.
  Socket accept();
  void shutdown();

 private:
  Socket sock_;
  int port_ = 0;
};

// Throws ConnectionLost when the peer cannot be reached.
Socket connect_tcp(const std::string& host, int port);

// Framed, thread-safe-for-send connection.
class Connection {
 public:
  Connection() = default;
  explicit Connection(Socket s) : sock_(std::move(s)) {}

  bool open() const { return sock_.valid(); }
  void send(MsgType type, std::span<const std::uint8_t> payload);
  // Waits up to timeout_ms (negative: forever). Returns nullopt on timeout;
  // throws ConnectionLost on EOF or socket error and protocol errors on bad frames.
  std::optional<Frame> recv(int timeout_ms = -1);
  void shutdown() { sock_.shutdown(); }
  void close() { sock_.close(); }

 private:
  Socket sock_;
  FrameReader reader_;
  std::mutex send_mu_;
};

}  // namespace dynarace
