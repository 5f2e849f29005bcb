#include "readout/net.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <charconv>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace readout::net {
namespace {

[[noreturn]] void fail(const std::string& what) { throw NetError(errno, what); }

}  // namespace

Endpoint parse_endpoint(std::string_view text, std::string_view default_host) {
  Endpoint ep{std::string(default_host), 0};
  std::string_view port_part = text;
  if (auto colon = text.rfind(':'); colon != std::string_view::npos) {
    if (colon > 0) ep.host = std::string(text.substr(0, colon));
    port_part = text.substr(colon + 1);
  }
  unsigned value = 0;
  auto [ptr, ec] = std::from_chars(port_part.data(), port_part.data() + port_part.size(), value);
  if (ec != std::errc{} || ptr != port_part.data() + port_part.size() || value > 65535) {
    throw std::invalid_argument("bad endpoint '" + std::string(text) + "'");
  }
  ep.port = static_cast<std::uint16_t>(value);
  return ep;
}

sockaddr_in to_sockaddr(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  const std::string host = ep.host == "localhost" || ep.host.empty() ? "127.0.0.1" : ep.host;
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
      throw std::invalid_argument("cannot resolve host '" + ep.host + "'");
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
  }
  return addr;
}

Socket& Socket::operator=(Socket&& other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.release();
  }
  return *this;
}

int Socket::release() {
  int fd = fd_;
  fd_ = -1;
  return fd;
}

void Socket::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

std::uint16_t Socket::local_port() const {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0) fail("getsockname");
  return ntohs(addr.sin_port);
}

bool wait_readable(int fd, std::chrono::milliseconds timeout) {
  pollfd p{fd, POLLIN, 0};
  for (;;) {
    const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc < 0 && errno == EINTR) return false;
    if (rc < 0) fail("poll");
    return rc > 0;
  }
}

Socket tcp_listen(const Endpoint& ep, int backlog) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) fail("socket");
  int one = 1;
  setsockopt(s.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const sockaddr_in addr = to_sockaddr(ep);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) fail("bind " + ep.to_string());
  if (::listen(s.fd(), backlog) != 0) fail("listen");
  return s;
}

std::optional<Socket> tcp_accept(const Socket& listener, std::chrono::milliseconds timeout) {
  if (!wait_readable(listener.fd(), timeout)) return std::nullopt;
  Socket c(::accept(listener.fd(), nullptr, nullptr));
  if (!c.valid()) {
    if (errno == EINTR || errno == EAGAIN) return std::nullopt;
    fail("accept");
  }
  return c;
}

Socket tcp_connect(const Endpoint& ep) {
  Socket s(::socket(AF_INET, SOCK_STREAM, 0));
  if (!s.valid()) fail("socket");
  const sockaddr_in addr = to_sockaddr(ep);
  if (::connect(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) fail("connect " + ep.to_string());
  return s;
}

void send_all(const Socket& s, std::span<const std::uint8_t> bytes) {
  std::size_t sent = 0;
  while (sent < bytes.size()) {
    const ssize_t n = ::send(s.fd(), bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail("send");
    }
    sent += static_cast<std::size_t>(n);
  }
}

std::size_t recv_some(const Socket& s, std::span<std::uint8_t> buffer) {
  for (;;) {
    const ssize_t n = ::recv(s.fd(), buffer.data(), buffer.size(), 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail("recv");
    }
    return static_cast<std::size_t>(n);
  }
}

Socket udp_open() {
  Socket s(::socket(AF_INET, SOCK_DGRAM, 0));
  if (!s.valid()) fail("socket");
  return s;
}

Socket udp_bind(const Endpoint& ep) {
  Socket s = udp_open();
  const sockaddr_in addr = to_sockaddr(ep);
  if (::bind(s.fd(), reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) fail("bind " + ep.to_string());
  return s;
}

void udp_send_to(const Socket& s, const sockaddr_in& to, std::span<const std::uint8_t> bytes) {
  const ssize_t n = ::sendto(s.fd(), bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr*>(&to), sizeof to);
  if (n < 0) fail("sendto");
}

void udp_send_to(const Socket& s, const Endpoint& to, std::span<const std::uint8_t> bytes) {
  udp_send_to(s, to_sockaddr(to), bytes);
}

std::optional<Datagram> udp_recv(const Socket& s, std::span<std::uint8_t> buffer, std::chrono::milliseconds timeout) {
  if (!wait_readable(s.fd(), timeout)) return std::nullopt;
  Datagram d{};
  socklen_t len = sizeof d.from;
  const ssize_t n =
      ::recvfrom(s.fd(), buffer.data(), buffer.size(), MSG_DONTWAIT, reinterpret_cast<sockaddr*>(&d.from), &len);
  if (n < 0) {
    if (errno == EAGAIN || errno == EWOULDBLOCK || errno == EINTR || errno == ECONNREFUSED) return std::nullopt;
    fail("recvfrom");
  }
  d.size = static_cast<std::size_t>(n);
  return d;
}

}  // namespace readout::net
