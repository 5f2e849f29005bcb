#pragma once

// UDP endpoints for the register protocol: a board-side server that applies
// datagrams to a register file owned by the caller, and a host-side client
// with same-sequence retransmission and read-back verification.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <stop_token>
#include <vector>

#include "readout/net.hpp"
#include "readout/regproto.hpp"

namespace readout::regproto {

// Fault injection for tests: independent drop probabilities per direction.
struct LossModel {
  double drop_requests = 0.0;
  double drop_replies = 0.0;
  std::uint64_t seed = 1;
};

struct ServerStats {
  std::uint64_t received = 0;
  std::uint64_t dropped_requests = 0;
  std::uint64_t dropped_replies = 0;
  std::uint64_t replies = 0;
};

class RegisterServer {
 public:
  using Handler = std::function<std::optional<std::vector<std::uint8_t>>(std::span<const std::uint8_t>)>;

  explicit RegisterServer(const net::Endpoint& bind, LossModel loss = {});

  std::uint16_t port() const { return socket_.local_port(); }

  // Waits up to `timeout` for one datagram and answers it. False on timeout.
  bool service(const Handler& handler, std::chrono::milliseconds timeout);
  bool service(RegisterFile& regs, std::chrono::milliseconds timeout);

  const ServerStats& stats() const { return stats_; }

 private:
  net::Socket socket_;
  LossModel loss_;
  std::mt19937_64 rng_;
  ServerStats stats_;
};

// Serves `regs` until stop is requested. The calling thread owns `regs`.
void serve_registers(RegisterServer& server, RegisterFile& regs, std::stop_token stop);

struct ClientOptions {
  std::chrono::milliseconds timeout{100};
  unsigned retries = 8;
};

class Timeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RemoteError : public std::runtime_error {
 public:
  explicit RemoteError(std::uint8_t code);
  std::uint8_t code() const { return code_; }

 private:
  std::uint8_t code_;
};

class VerifyMismatch : public std::runtime_error {
 public:
  VerifyMismatch(std::uint32_t addr, std::uint32_t wrote, std::uint32_t readback);
  std::uint32_t addr() const { return addr_; }
  std::uint32_t wrote() const { return wrote_; }
  std::uint32_t readback() const { return readback_; }

 private:
  std::uint32_t addr_, wrote_, readback_;
};

struct ClientStats {
  std::uint64_t operations = 0;
  std::uint64_t retransmits = 0;
  std::uint64_t stale_replies = 0;  // duplicates or replies to earlier sequence ids
};

struct WriteOutcome {
  std::vector<std::uint32_t> readback;
  unsigned attempts = 0;
};

class RegClient {
 public:
  explicit RegClient(net::Endpoint server, ClientOptions options = {});

  std::vector<std::uint32_t> read(std::uint32_t addr, std::uint8_t count = 1);
  // Succeeds iff the read-back carried by the reply equals `values`.
  WriteOutcome write_verified(std::uint32_t addr, std::vector<std::uint32_t> values);
  // Sends `request` (its seq is replaced) and returns the matching reply.
  // Error replies are returned, not thrown.
  RegPacket transact(RegPacket request, unsigned* attempts = nullptr);

  const ClientStats& stats() const { return stats_; }

 private:
  net::Endpoint server_;
  sockaddr_in server_addr_;
  ClientOptions options_;
  net::Socket socket_;
  std::uint8_t next_seq_ = 0;
  ClientStats stats_;
};

}  // namespace readout::regproto
