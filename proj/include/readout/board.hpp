#pragma once

// One readout board: trigger/rate-paced frame generator, FIFO data cache,
// daisy-chain arbiter and the slow-control register file.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "readout/arbiter.hpp"
#include "readout/buffer.hpp"
#include "readout/framing.hpp"
#include "readout/measure.hpp"
#include "readout/regproto.hpp"
#include "readout/time.hpp"

namespace readout {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class GeneratorMode { TriggerPaced, RatePaced };
enum class PayloadKind { Keyed, Repeating };

struct BoardConfig {
  std::uint16_t board_id = 0;
  GeneratorMode generator_mode = GeneratorMode::TriggerPaced;
  PayloadKind payload = PayloadKind::Keyed;
  double frame_rate_hz = 1000.0;
  std::uint32_t frame_payload_bytes = 1024;
  std::uint64_t fifo_capacity_bytes = BoundedFrameFifo::kDefaultCapacity;
  std::uint16_t udp_port = regproto::kDefaultPort;
  double clock_hz = 80e6;  // informational
  // Register values written through the slow-control path when the board starts.
  std::uint32_t rate_kbps = 0;
  bool trigger_enable = true;

  void validate() const;  // throws ConfigError
};

// Deterministic payload keyed by (seed, board, frame). Big-endian 64-bit words
// from a splitmix64 stream.
std::vector<std::uint8_t> keyed_payload(std::uint64_t seed, std::uint16_t board_id, std::uint32_t frame_id,
                                        std::size_t length);
// The fixed payload a traffic generator repeats in every frame.
std::vector<std::uint8_t> repeating_payload(std::uint64_t seed, std::uint16_t board_id, std::size_t length);

framing::Frame generate_frame(const BoardConfig& config, std::uint64_t seed, std::uint32_t trigger_id,
                              std::uint32_t frame_id);

enum class ContentClass { Keyed, Repeating, Mismatch };
std::string_view to_string(ContentClass c);

// Sink-side content check: regenerates the expected payload for a frame.
class PayloadVerifier {
 public:
  explicit PayloadVerifier(std::uint64_t seed) : seed_(seed) {}
  ContentClass classify(const framing::Frame& frame);

 private:
  std::uint64_t seed_;
  std::map<std::pair<std::uint16_t, std::size_t>, std::vector<std::uint8_t>> repeating_;
};

struct TriggerTick {};
struct DrainGrant {};
struct RegPacketIn {
  std::vector<std::uint8_t> datagram;
};
struct UpstreamFrame {
  framing::Frame frame;
};
using BoardEvent = std::variant<TriggerTick, DrainGrant, RegPacketIn, UpstreamFrame>;

struct FrameOut {
  std::size_t source;  // arbiter input: upstream lanes first, local last
  framing::Frame frame;
};
struct RegReply {
  std::vector<std::uint8_t> datagram;
};
using BoardOutput = std::variant<FrameOut, RegReply>;

struct BoardStats {
  std::uint64_t triggers = 0;
  std::uint64_t generated = 0;  // frames produced by the generator, dropped ones included
  std::uint64_t emitted_local = 0;
  std::uint64_t forwarded = 0;
  std::uint64_t bytes_emitted = 0;
  std::uint64_t reg_packets = 0;
};

class Board {
 public:
  Board(BoardConfig config, std::uint64_t seed);

  const BoardConfig& config() const { return config_; }
  std::uint16_t id() const { return config_.board_id; }

  // `input` carries frames from upstream boards (null at the chain head);
  // `output` is the next board's input (null when this board feeds the sink).
  void connect(std::shared_ptr<UpstreamChannel> input, std::shared_ptr<UpstreamChannel> output);
  const std::shared_ptr<UpstreamChannel>& input() const { return input_; }
  const std::shared_ptr<UpstreamChannel>& output() const { return output_; }

  // Applies the startup register values from the config as write datagrams.
  void power_on(SimTime now);

  // Time of the next trigger tick (trigger mode) or paced emission (rate mode).
  std::optional<SimTime> next_generation_time() const;
  // Processes the generator event due at `now`, if any. Returns true when a
  // frame was generated (whether or not the FIFO accepted it).
  bool on_tick(SimTime now);
  // Polls the arbiter. A granted frame has a slot reserved in `output`.
  std::optional<FrameOut> on_drain_grant(SimTime now);
  std::optional<std::vector<std::uint8_t>> on_reg_packet(std::span<const std::uint8_t> datagram, SimTime now);
  void on_upstream_frame(framing::Frame frame);

  std::vector<BoardOutput> step(BoardEvent event, SimTime now);

  bool has_pending_frames() const;
  const regproto::RegisterFile& registers() const { return regs_; }
  const BoundedFrameFifo& fifo() const { return fifo_; }
  const BoardStats& stats() const { return stats_; }
  const PollingArbiter& arbiter() const { return arbiter_; }
  std::uint32_t next_frame_id() const { return next_frame_id_; }

 private:
  bool enabled() const;
  void latch(SimTime now);
  void refresh_status(SimTime now);
  void generate(std::uint32_t trigger_id);
  SimTime trigger_time(std::uint64_t tick) const;

  BoardConfig config_;
  std::uint64_t seed_;
  regproto::RegisterFile regs_;
  BoundedFrameFifo fifo_;
  PollingArbiter arbiter_{1};
  std::shared_ptr<UpstreamChannel> input_;
  std::shared_ptr<UpstreamChannel> output_;
  measure::WindowCounter emitted_counter_;
  BoardStats stats_;

  std::uint32_t next_frame_id_ = 0;
  std::uint64_t next_tick_ = 0;  // trigger mode

  // Rate mode: emission k since the epoch happens at epoch + k * frame_bits / rate.
  bool running_ = false;
  std::uint32_t active_payload_ = 0;
  std::uint64_t active_rate_bps_ = 0;
  SimTime epoch_{0};
  std::uint64_t emitted_since_epoch_ = 0;
  SimTime next_emission_{0};
  std::vector<std::uint8_t> repeat_cache_;
};

}  // namespace readout
