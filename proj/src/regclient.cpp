#include "readout/regclient.hpp"

#include <array>
#include <string>

namespace readout::regproto {

RegisterServer::RegisterServer(const net::Endpoint& bind, LossModel loss)
    : socket_(net::udp_bind(bind)), loss_(loss), rng_(loss.seed) {}

bool RegisterServer::service(const Handler& handler, std::chrono::milliseconds timeout) {
  std::array<std::uint8_t, 2048> buf{};
  auto dg = net::udp_recv(socket_, buf, timeout);
  if (!dg) return false;
  ++stats_.received;
  std::bernoulli_distribution drop_req(loss_.drop_requests);
  std::bernoulli_distribution drop_rep(loss_.drop_replies);
  if (loss_.drop_requests > 0 && drop_req(rng_)) {
    ++stats_.dropped_requests;
    return true;
  }
  auto reply = handler(std::span<const std::uint8_t>(buf.data(), dg->size));
  if (!reply) return true;
  if (loss_.drop_replies > 0 && drop_rep(rng_)) {
    ++stats_.dropped_replies;
    return true;
  }
  net::udp_send_to(socket_, dg->from, *reply);
  ++stats_.replies;
  return true;
}

bool RegisterServer::service(RegisterFile& regs, std::chrono::milliseconds timeout) {
  return service([&](std::span<const std::uint8_t> d) { return handle_datagram(d, regs); }, timeout);
}

void serve_registers(RegisterServer& server, RegisterFile& regs, std::stop_token stop) {
  while (!stop.stop_requested()) server.service(regs, std::chrono::milliseconds(10));
}

RemoteError::RemoteError(std::uint8_t code)
    : std::runtime_error("register access rejected: " + std::string(to_string(static_cast<ErrorCode>(code)))),
      code_(code) {}

VerifyMismatch::VerifyMismatch(std::uint32_t addr, std::uint32_t wrote, std::uint32_t readback)
    : std::runtime_error("read-back mismatch at address " + std::to_string(addr) + ": wrote " +
                         std::to_string(wrote) + ", read back " + std::to_string(readback)),
      addr_(addr),
      wrote_(wrote),
      readback_(readback) {}

RegClient::RegClient(net::Endpoint server, ClientOptions options)
    : server_(std::move(server)),
      server_addr_(net::to_sockaddr(server_)),
      options_(options),
      socket_(net::udp_open()) {}

RegPacket RegClient::transact(RegPacket request, unsigned* attempts) {
  request.seq = next_seq_++;
  const auto bytes = encode_packet(request);
  ++stats_.operations;
  std::array<std::uint8_t, 2048> buf{};

  for (unsigned attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) ++stats_.retransmits;
    net::udp_send_to(socket_, server_addr_, bytes);
    const auto deadline = std::chrono::steady_clock::now() + options_.timeout;
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) break;
      auto dg = net::udp_recv(socket_, buf, left);
      if (!dg) break;
      RegPacket reply;
      try {
        reply = decode_packet(std::span<const std::uint8_t>(buf.data(), dg->size));
      } catch (const Malformed&) {
        continue;
      }
      if (!reply.reply || reply.seq != request.seq || reply.op != request.op) {
        ++stats_.stale_replies;
        continue;
      }
      if (attempts) *attempts = attempt + 1;
      return reply;
    }
  }
  throw Timeout("no reply from " + server_.to_string() + " after " + std::to_string(options_.retries + 1) +
                " attempts");
}

std::vector<std::uint32_t> RegClient::read(std::uint32_t addr, std::uint8_t count) {
  RegPacket reply = transact(make_read(0, addr, count));
  if (reply.error) throw RemoteError(reply.error_code);
  return reply.data;
}

WriteOutcome RegClient::write_verified(std::uint32_t addr, std::vector<std::uint32_t> values) {
  WriteOutcome out;
  RegPacket reply = transact(make_write(0, addr, values), &out.attempts);
  if (reply.error) throw RemoteError(reply.error_code);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t got = i < reply.data.size() ? reply.data[i] : 0;
    if (got != values[i]) throw VerifyMismatch(addr + static_cast<std::uint32_t>(4 * i), values[i], got);
  }
  out.readback = std::move(reply.data);
  return out;
}

}  // namespace readout::regproto
