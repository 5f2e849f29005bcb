#pragma once

// Thin RAII wrappers over POSIX sockets for the real-mode tools.

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>

#include <netinet/in.h>

namespace readout::net {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  std::string to_string() const { return host + ":" + std::to_string(port); }
  friend bool operator==(const Endpoint&, const Endpoint&) = default;
};

// Accepts "host:port", ":port" or "port".
Endpoint parse_endpoint(std::string_view text, std::string_view default_host = "127.0.0.1");

sockaddr_in to_sockaddr(const Endpoint& ep);

class NetError : public std::system_error {
 public:
  NetError(int err, const std::string& what) : std::system_error(err, std::generic_category(), what) {}
};

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(other.release()) {}
  Socket& operator=(Socket&& other) noexcept;
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  int release();
  void close();
  std::uint16_t local_port() const;

 private:
  int fd_ = -1;
};

// Waits until `fd` is readable; false on timeout.
bool wait_readable(int fd, std::chrono::milliseconds timeout);

Socket tcp_listen(const Endpoint& ep, int backlog = 1);
std::optional<Socket> tcp_accept(const Socket& listener, std::chrono::milliseconds timeout);
Socket tcp_connect(const Endpoint& ep);
void send_all(const Socket& s, std::span<const std::uint8_t> bytes);
// Returns 0 on orderly shutdown. Throws NetError on reset.
std::size_t recv_some(const Socket& s, std::span<std::uint8_t> buffer);

Socket udp_bind(const Endpoint& ep);
Socket udp_open();
void udp_send_to(const Socket& s, const Endpoint& to, std::span<const std::uint8_t> bytes);
void udp_send_to(const Socket& s, const sockaddr_in& to, std::span<const std::uint8_t> bytes);
struct Datagram {
  std::size_t size;
  sockaddr_in from;
};
std::optional<Datagram> udp_recv(const Socket& s, std::span<std::uint8_t> buffer, std::chrono::milliseconds timeout);

}  // namespace readout::net
