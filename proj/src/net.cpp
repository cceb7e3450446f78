#include "dynarace/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace dynarace {

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

void Socket::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

namespace {

sockaddr_in resolve(const std::string& host, int port) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;
  addrinfo hints{}, *res = nullptr;
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
    throw Error(ErrorCode::kConnectionLost, "cannot resolve host " + host);
  }
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

}  // namespace

Listener::Listener(const std::string& host, int port) {
  sock_ = Socket(::socket(AF_INET, SOCK_STREAM, 0));
  if (!sock_.valid()) throw Error(ErrorCode::kConnectionLost, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr = resolve(host, port);
  if (::bind(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw Error(ErrorCode::kConnectionLost,
                "bind " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  }
  if (::listen(sock_.fd(), 16) != 0) throw Error(ErrorCode::kConnectionLost, std::string("listen: ") + std::strerror(errno));
  socklen_t len = sizeof addr;
  ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

Socket Listener::accept() {
  while (true) {
    const int fd = ::accept(sock_.fd(), nullptr, nullptr);
    if (fd >= 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return Socket(fd);
    }
    if (errno == EINTR) continue;
    return Socket();
  }
}

void Listener::shutdown() { sock_.shutdown(); }

Socket connect_tcp(const std::string& host, int port) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) throw Error(ErrorCode::kConnectionLost, std::string("socket: ") + std::strerror(errno));
  sockaddr_in addr = resolve(host, port);
  if (::connect(s.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    throw Error(ErrorCode::kConnectionLost,
                "connect " + host + ":" + std::to_string(port) + ": " + std::strerror(errno));
  }
  int one = 1;
  ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return s;
}

void Connection::send(MsgType type, std::span<const std::uint8_t> payload) {
  const Bytes frame = encode_frame(type, payload);
  std::lock_guard lock(send_mu_);
  std::size_t off = 0;
  while (off < frame.size()) {
    const ssize_t n = ::send(sock_.fd(), frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::kConnectionLost, std::string("send: ") + std::strerror(errno));
    off += static_cast<std::size_t>(n);
  }
}

std::optional<Frame> Connection::recv(int timeout_ms) {
  std::uint8_t buf[1 << 16];
  while (true) {
    if (auto f = reader_.next()) return f;
    if (!sock_.valid()) throw Error(ErrorCode::kConnectionLost, "connection closed");
    pollfd p{sock_.fd(), POLLIN, 0};
    const int r = ::poll(&p, 1, timeout_ms);
    if (r < 0 && errno == EINTR) continue;
    if (r < 0) throw Error(ErrorCode::kConnectionLost, std::string("poll: ") + std::strerror(errno));
    if (r == 0) return std::nullopt;
    const ssize_t n = ::recv(sock_.fd(), buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error(ErrorCode::kConnectionLost, "peer closed the connection");
    reader_.feed(std::span<const std::uint8_t>(buf, static_cast<std::size_t>(n)));
  }
}

}  // namespace dynarace
