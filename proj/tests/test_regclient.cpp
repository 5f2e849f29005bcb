#include <doctest.h>

#include <random>
#include <thread>

#include "readout/regclient.hpp"

using namespace readout;
using namespace readout::regproto;

namespace {

struct ServerFixture {
  RegisterFile regs = RegisterFile::board_map(5);
  RegisterServer server;
  std::jthread thread;

  explicit ServerFixture(LossModel loss = {})
      : server(net::Endpoint{"127.0.0.1", 0}, loss),
        thread([this](std::stop_token st) { serve_registers(server, regs, st); }) {}

  net::Endpoint endpoint() const { return {"127.0.0.1", server.port()}; }
};

}  // namespace

TEST_SUITE("regclient") {
  TEST_CASE("lossless loopback: random verified writes, zero retransmits") {
    ServerFixture fx;
    RegClient client(fx.endpoint());
    std::mt19937_64 rng(1);
    for (int i = 0; i < 300; ++i) {
      const auto v = static_cast<std::uint32_t>(rng());
      const auto out = client.write_verified(reg::DataRateCtrl, {v});
      CHECK(out.readback == std::vector<std::uint32_t>{v});
      CHECK(out.attempts == 1);
    }
    CHECK(client.stats().retransmits == 0);
    CHECK(client.read(reg::BoardId) == std::vector<std::uint32_t>{5});
  }

  TEST_CASE("error replies surface as RemoteError") {
    ServerFixture fx;
    RegClient client(fx.endpoint());
    try {
      client.write_verified(reg::BoardId, {1});
      FAIL("write to a read-only register succeeded");
    } catch (const RemoteError& e) {
      CHECK(e.code() == static_cast<std::uint8_t>(ErrorCode::ReadOnly));
    }
    CHECK_THROWS_AS(client.read(0x400), RemoteError);
  }

  TEST_CASE("absent server times out") {
    net::Socket placeholder = net::udp_bind({"127.0.0.1", 0});
    const auto port = placeholder.local_port();
    RegClient client({"127.0.0.1", port}, {std::chrono::milliseconds(10), 2});
    CHECK_THROWS_AS(client.read(reg::BoardId), Timeout);
  }

  TEST_CASE("retries recover from request loss and reply loss") {
    for (bool requests : {true, false}) {
      LossModel loss;
      (requests ? loss.drop_requests : loss.drop_replies) = 0.5;
      loss.seed = requests ? 3 : 4;
      ServerFixture fx(loss);
      RegClient client(fx.endpoint(), {std::chrono::milliseconds(5), 8});
      int ok = 0;
      const int n = 200;
      for (int i = 0; i < n; ++i) {
        try {
          client.write_verified(reg::DataRateCtrl, {static_cast<std::uint32_t>(i)});
          ++ok;
        } catch (const Timeout&) {
        }
      }
      CHECK(ok >= 196);
      CHECK(client.stats().retransmits > 0);
    }
  }

  TEST_CASE("duplicate replies are absorbed") {
    // A server that answers every request twice.
    net::Socket sock = net::udp_bind({"127.0.0.1", 0});
    const auto port = sock.local_port();
    auto regs = RegisterFile::board_map(2);
    std::jthread server([&](std::stop_token st) {
      std::array<std::uint8_t, 2048> buf{};
      while (!st.stop_requested()) {
        auto dg = net::udp_recv(sock, buf, std::chrono::milliseconds(10));
        if (!dg) continue;
        auto reply = handle_datagram(std::span<const std::uint8_t>(buf.data(), dg->size), regs);
        if (!reply) continue;
        net::udp_send_to(sock, dg->from, *reply);
        net::udp_send_to(sock, dg->from, *reply);
      }
    });
    RegClient client({"127.0.0.1", port});
    for (std::uint32_t v = 0; v < 50; ++v) CHECK(client.write_verified(reg::DataRateCtrl, {v}).readback[0] == v);
    CHECK(client.stats().stale_replies >= 40);
  }

  TEST_CASE("replayed datagrams leave the same state as a single delivery") {
    ServerFixture fx;
    auto shadow = RegisterFile::board_map(5);
    net::Socket sock = net::udp_open();
    std::array<std::uint8_t, 2048> buf{};
    std::mt19937_64 rng(9);
    for (int i = 0; i < 100; ++i) {
      const auto req = make_write(static_cast<std::uint8_t>(i), reg::DataRateCtrl, {static_cast<std::uint32_t>(rng())});
      const auto bytes = encode_packet(req);
      std::vector<RegPacket> replies;
      for (int copy = 0; copy < 3; ++copy) {
        net::udp_send_to(sock, fx.endpoint(), bytes);
        auto dg = net::udp_recv(sock, buf, std::chrono::milliseconds(500));
        REQUIRE(dg);
        replies.push_back(decode_packet(std::span<const std::uint8_t>(buf.data(), dg->size)));
      }
      CHECK(replies[0] == replies[1]);
      CHECK(replies[1] == replies[2]);
      handle_request(req, shadow);
    }
    fx.thread.request_stop();
    fx.thread.join();
    CHECK(fx.regs == shadow);
  }
}
