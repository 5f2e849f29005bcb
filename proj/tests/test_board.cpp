#include <doctest.h>

#include "readout/board.hpp"
#include "readout/chain.hpp"
#include "readout/sim.hpp"

using namespace readout;
using namespace std::chrono_literals;

namespace {

BoardConfig trigger_board(std::uint16_t id) {
  BoardConfig c;
  c.board_id = id;
  return c;
}

std::uint32_t read_reg(Board& b, std::uint32_t addr, SimTime now) {
  auto reply = b.on_reg_packet(regproto::encode_packet(regproto::make_read(0, addr)), now);
  REQUIRE(reply);
  const auto p = regproto::decode_packet(*reply);
  REQUIRE_FALSE(p.error);
  return p.data.at(0);
}

void write_reg(Board& b, std::uint32_t addr, std::uint32_t value, SimTime now) {
  auto reply = b.on_reg_packet(regproto::encode_packet(regproto::make_write(0, addr, {value})), now);
  REQUIRE(reply);
  REQUIRE_FALSE(regproto::decode_packet(*reply).error);
}

ChainTopology rate_topology(std::uint32_t rate_kbps, double duration) {
  ChainTopology t;
  BoardConfig b;
  b.board_id = 1;
  b.generator_mode = GeneratorMode::RatePaced;
  b.rate_kbps = rate_kbps;
  b.frame_payload_bytes = 1024;
  t.boards = {b};
  t.duration_s = duration;
  return t;
}

}  // namespace

TEST_SUITE("board") {
  TEST_CASE("generated frames are deterministic and keyed by board and frame id") {
    const auto cfg = trigger_board(1);
    CHECK(generate_frame(cfg, 5, 0, 0) == generate_frame(cfg, 5, 0, 0));
    CHECK(generate_frame(cfg, 5, 0, 0).payload != generate_frame(cfg, 5, 1, 1).payload);
    CHECK(generate_frame(cfg, 5, 0, 0).payload != generate_frame(trigger_board(2), 5, 0, 0).payload);
    CHECK(generate_frame(cfg, 5, 0, 0).payload != generate_frame(cfg, 6, 0, 0).payload);
    const auto f = generate_frame(cfg, 5, 17, 3);
    CHECK(f.board_id == 1);
    CHECK(f.frame_id == 3);
    CHECK(f.trigger_id == 17);
    CHECK(f.payload.size() == 1024);
  }

  TEST_CASE("payload verifier tells board frames from generator frames") {
    PayloadVerifier v(5);
    auto cfg = trigger_board(1);
    CHECK(v.classify(generate_frame(cfg, 5, 0, 9)) == ContentClass::Keyed);
    cfg.payload = PayloadKind::Repeating;
    CHECK(v.classify(generate_frame(cfg, 5, 0, 9)) == ContentClass::Repeating);
    auto bad = generate_frame(trigger_board(1), 5, 0, 9);
    bad.payload[100] ^= 1;
    CHECK(v.classify(bad) == ContentClass::Mismatch);
    CHECK(v.classify(generate_frame(trigger_board(1), 6, 0, 9)) == ContentClass::Mismatch);
  }

  TEST_CASE("config validation") {
    auto c = trigger_board(0);
    c.frame_payload_bytes = 1001;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = trigger_board(0);
    c.frame_rate_hz = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.generator_mode = GeneratorMode::RatePaced;
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("TRIGGER_CTRL = 0 gates 10^4 trigger ticks") {
    auto cfg = trigger_board(1);
    cfg.trigger_enable = false;
    Board b(cfg, 1);
    b.connect(nullptr, nullptr);
    b.power_on(SimTime{0});
    for (int i = 0; i < 10000; ++i) b.on_tick(*b.next_generation_time());
    CHECK(b.stats().triggers == 10000);
    CHECK(b.stats().generated == 0);
    CHECK(b.fifo().empty());
  }

  TEST_CASE("trigger-paced ticks fall exactly on k / frame_rate") {
    auto cfg = trigger_board(1);
    cfg.frame_rate_hz = 3000;
    Board b(cfg, 1);
    b.connect(nullptr, nullptr);
    b.power_on(SimTime{0});
    for (std::int64_t k = 0; k < 10; ++k) {
      const auto t = *b.next_generation_time();
      CHECK(t.count() == (k * 1'000'000'000'000 + 1500) / 3000);
      CHECK(b.on_tick(t));
    }
    CHECK(b.fifo().size() == 10);
    CHECK(b.fifo().front()->frame_id == 0);
  }

  TEST_CASE("power-on applies the configured registers") {
    auto cfg = trigger_board(4);
    cfg.generator_mode = GeneratorMode::RatePaced;
    cfg.rate_kbps = 250000;
    cfg.frame_payload_bytes = 2048;
    Board b(cfg, 1);
    b.connect(nullptr, nullptr);
    b.power_on(SimTime{0});
    CHECK(b.registers().read(regproto::reg::BoardId) == 4);
    CHECK(b.registers().read(regproto::reg::DataRateCtrl) == 250000);
    CHECK(b.registers().read(regproto::reg::FrameSize) == 2048);
    CHECK(b.registers().read(regproto::reg::TriggerCtrl) == 1);
    CHECK(b.next_generation_time() == SimTime{0});
  }

  TEST_CASE("rate mode at 100 Mbit/s emits the token-bucket count over 1 s") {
    const auto r = run_virtual_chain(rate_topology(100000, 1.0));
    REQUIRE(r.passed());
    // Frame k leaves at ceil(k * 8448 bits / 1e8 bit/s); count those before 1 s.
    const std::uint64_t frame_bits = 1056 * 8;
    using u128 = unsigned __int128;
    std::uint64_t expected = 0;
    while ((u128{expected} * frame_bits * 1'000'000'000'000ull + 99'999'999) / 100'000'000 < 1'000'000'000'000ull) ++expected;
    CHECK(r.boards[0].stats.generated == expected);
    const double bits = static_cast<double>(r.audit.frame_bytes) * 8;
    CHECK(std::abs(bits - 1e8) <= static_cast<double>(frame_bits));
  }

  TEST_CASE("rate mode stays idle while DATA_RATE_CTRL is zero") {
    const auto r = run_virtual_chain(rate_topology(0, 0.1));
    CHECK(r.boards[0].stats.generated == 0);
    CHECK(r.audit.frames == 0);
  }

  TEST_CASE("mid-run DATA_RATE_CTRL change shows up in the sink windows") {
    auto t = rate_topology(100000, 1.0);
    RegisterOp op;
    op.at = from_seconds(0.5);
    op.board_id = 1;
    op.addr = regproto::reg::DataRateCtrl;
    op.values = {300000};
    t.register_ops = {op};
    const auto r = run_virtual_chain(t);
    REQUIRE(r.passed());
    REQUIRE(r.register_log.size() == 1);
    CHECK(r.register_log[0].reply->data == std::vector<std::uint32_t>{300000});

    auto mean_between = [&](double a, double b) {
      std::uint64_t bytes = 0;
      std::size_t n = 0;
      for (const auto& s : r.report.samples) {
        if (s.t_start_us >= a * 1e6 && s.t_start_us < b * 1e6) {
          bytes += s.bytes;
          ++n;
        }
      }
      return static_cast<double>(bytes) * 8 / (static_cast<double>(n) * 100e-6);
    };
    CHECK(mean_between(0.1, 0.5) == doctest::Approx(100e6).epsilon(0.01));
    CHECK(mean_between(0.51, 1.0) == doctest::Approx(300e6).epsilon(0.01));
  }

  TEST_CASE("FRAME_SIZE change applies at the next frame boundary") {
    auto t = rate_topology(100000, 0.02);
    RegisterOp op;
    op.at = from_seconds(0.01);
    op.board_id = 1;
    op.addr = regproto::reg::FrameSize;
    op.values = {4096};
    t.register_ops = {op};
    std::vector<std::size_t> sizes;
    ChainHooks hooks;
    hooks.on_frame = [&](SimTime, const framing::Frame& f) { sizes.push_back(f.payload.size()); };
    const auto r = run_virtual_chain(t, hooks);
    REQUIRE(r.passed());
    REQUIRE(sizes.size() > 4);
    CHECK(sizes.front() == 1024);
    CHECK(sizes.back() == 4096);
    CHECK(std::is_sorted(sizes.begin(), sizes.end()));
    for (auto s : sizes) CHECK((s == 1024 || s == 4096));
  }

  TEST_CASE("status registers: THROUGHPUT_COUNT, FIFO_OCCUPANCY, OVERFLOW_COUNT") {
    auto cfg = trigger_board(1);
    cfg.frame_rate_hz = 100000;  // one frame every 10 us
    cfg.fifo_capacity_bytes = 3 * 1056;
    Board b(cfg, 1);
    b.connect(nullptr, nullptr);
    b.power_on(SimTime{0});

    // 25 frames in the first 250 us; drain the first 15 only.
    std::uint64_t drained_in_window1 = 0;
    for (int k = 0; k < 25; ++k) {
      const SimTime t = *b.next_generation_time();
      b.on_tick(t);
      if (k < 15) {
        auto out = b.on_drain_grant(t);
        REQUIRE(out);
        if (t >= 100us && t < 200us) drained_in_window1 += framing::serialized_size(out->frame);
      }
    }
    CHECK(read_reg(b, regproto::reg::ThroughputCount, SimTime{250us}) == drained_in_window1);
    CHECK(read_reg(b, regproto::reg::FifoOccupancy, SimTime{250us}) == b.fifo().occupancy_bytes());
    CHECK(b.fifo().occupancy_bytes() == 3 * 1056);
    CHECK(read_reg(b, regproto::reg::OverflowCount, SimTime{250us}) == 7);
    CHECK(b.fifo().overflow_count() == 7);
  }

  TEST_CASE("register writes are rejected on read-only status registers") {
    Board b(trigger_board(1), 1);
    b.connect(nullptr, nullptr);
    b.power_on(SimTime{0});
    auto reply = b.on_reg_packet(regproto::encode_packet(regproto::make_write(3, regproto::reg::OverflowCount, {9})),
                                 SimTime{0});
    REQUIRE(reply);
    CHECK(regproto::decode_packet(*reply).error_code == static_cast<std::uint8_t>(regproto::ErrorCode::ReadOnly));
    write_reg(b, regproto::reg::TriggerCtrl, 0, SimTime{0});
    CHECK_FALSE(b.on_tick(*b.next_generation_time()));
  }

  TEST_CASE("board_step dispatches every event kind") {
    auto cfg = trigger_board(1);
    Board b(cfg, 1);
    b.connect(nullptr, nullptr);
    b.power_on(SimTime{0});
    CHECK(b.step(TriggerTick{}, SimTime{0}).empty());
    auto out = b.step(DrainGrant{}, SimTime{0});
    REQUIRE(out.size() == 1);
    CHECK(std::holds_alternative<FrameOut>(out[0]));
    out = b.step(RegPacketIn{regproto::encode_packet(regproto::make_read(1, 0))}, SimTime{0});
    REQUIRE(out.size() == 1);
    CHECK(std::holds_alternative<RegReply>(out[0]));
    CHECK_THROWS(b.step(UpstreamFrame{generate_frame(cfg, 1, 0, 0)}, SimTime{0}));
  }

  TEST_CASE("virtual clock runs equal timestamps in insertion order") {
    VirtualClock clock;
    std::vector<int> order;
    clock.schedule_at(SimTime{10}, [&] { order.push_back(2); });
    clock.schedule_at(SimTime{5}, [&] { order.push_back(1); });
    clock.schedule_at(SimTime{10}, [&] { order.push_back(3); });
    clock.schedule_at(SimTime{10}, [&] {
      order.push_back(4);
      clock.schedule_in(SimTime{0}, [&] { order.push_back(5); });
    });
    clock.run();
    CHECK(order == std::vector<int>{1, 2, 3, 4, 5});
    CHECK(clock.now() == SimTime{10});
    CHECK_THROWS_AS(clock.schedule_at(SimTime{9}, [] {}), std::invalid_argument);
  }
}
