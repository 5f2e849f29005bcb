#pragma once

// Moving frames from the chain tail to the DAQ sink: rate-limited virtual
// links with optional inter-packet gaps, the sink-side decoder and audit, and
// the real-socket TCP sink and traffic generator.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "readout/board.hpp"
#include "readout/framing.hpp"
#include "readout/measure.hpp"
#include "readout/net.hpp"
#include "readout/time.hpp"

namespace readout::transport {

inline constexpr std::uint16_t kDefaultSinkPort = 24577;
inline constexpr unsigned kWordBits = 64;

// A link that carries 64-bit words at rate_bps and idles for gap_words word
// times after every payload_words words carried. payload_words == 0 or
// gap_words == 0 means gapless.
struct LinkModel {
  std::uint64_t rate_bps = 10'000'000'000ull;
  std::uint32_t payload_words = 0;
  std::uint32_t gap_words = 0;

  bool gapless() const { return payload_words == 0 || gap_words == 0; }
  double efficiency() const;
  double effective_rate_bps() const { return static_cast<double>(rate_bps) * efficiency(); }
  void validate() const;  // throws ConfigError
};

struct GeneratorSpec {
  double clock_hz = 156.25e6;
  unsigned word_bits = 64;
  double duty = 1.0;  // fraction of clock cycles carrying a valid word
};

double offered_rate(const GeneratorSpec& spec);

class VirtualLink {
 public:
  struct Transfer {
    SimTime start;
    SimTime done;     // last word delivered
    SimTime free_at;  // link can start the next transfer (after any gap)
  };

  explicit VirtualLink(LinkModel model);

  bool idle(SimTime now) const { return now >= free_at_; }
  SimTime free_at() const { return free_at_; }
  // Starts at max(now, free_at()).
  Transfer transmit(SimTime now, std::size_t bytes);

  const LinkModel& model() const { return model_; }
  std::uint64_t bytes_carried() const { return bytes_; }

 private:
  SimTime words_time(std::uint64_t words) const;

  LinkModel model_;
  SimTime free_at_{0};
  std::uint64_t phase_ = 0;  // payload words carried since the last gap
  std::uint64_t bytes_ = 0;
};

struct TimedChunk {
  SimTime t;
  std::size_t bytes;
};

// Pushes chunks (ready times non-decreasing) through a link in order; returns
// the time each chunk finishes arriving.
std::vector<TimedChunk> virtual_link_transfer(const LinkModel& link, std::span<const TimedChunk> input);

// ---------------------------------------------------------------------------
// Sink

struct BoardAudit {
  std::uint16_t board_id = 0;
  std::uint64_t frames = 0;
  std::uint64_t bytes = 0;
  std::optional<std::uint32_t> first_frame_id;
  std::optional<std::uint32_t> last_frame_id;
  std::uint64_t missing = 0;       // frame ids skipped
  std::uint64_t out_of_order = 0;  // duplicates or regressions
  std::uint64_t content_board = 0;
  std::uint64_t content_generator = 0;
  std::uint64_t content_mismatch = 0;
};

struct SinkAudit {
  std::map<std::uint16_t, BoardAudit> boards;
  std::vector<framing::FramingError> errors;
  std::uint64_t frames = 0;
  std::uint64_t frame_bytes = 0;
  std::uint64_t stream_bytes = 0;
};

nlohmann::json audit_to_json(const SinkAudit& audit);

struct SinkOptions {
  std::uint64_t seed = 1;
  SimTime window = measure::kDefaultWindow;
  bool verify_content = true;
};

// Decodes the byte stream, audits every frame, and credits each decoded
// frame's serialized size to the window holding its arrival time.
class FrameSink {
 public:
  using Observer = std::function<void(SimTime, const framing::Frame&)>;

  explicit FrameSink(SinkOptions options = {});

  void set_observer(Observer observer) { observer_ = std::move(observer); }
  void on_bytes(SimTime t, std::span<const std::uint8_t> bytes);
  void finish(std::optional<SimTime> end = std::nullopt);

  const SinkAudit& audit() const { return audit_; }
  const measure::StreamingSampler& sampler() const { return sampler_; }

 private:
  void account(SimTime t);

  SinkOptions options_;
  framing::WireDecoder decoder_;
  PayloadVerifier verifier_;
  measure::StreamingSampler sampler_;
  SinkAudit audit_;
  Observer observer_;
  framing::DecodeResult scratch_;
  bool finished_ = false;
};

// ---------------------------------------------------------------------------
// Real mode

struct ServeOptions {
  // Timestamps are taken relative to this instant; default is the first byte received.
  std::optional<std::chrono::steady_clock::time_point> origin;
  // Give up waiting for a connection after this long; default waits until stopped.
  std::optional<std::chrono::milliseconds> accept_timeout;
  // Stop reading this long after the origin.
  std::optional<std::chrono::duration<double>> max_duration;
  // Pad the sample series with empty windows up to this time.
  std::optional<SimTime> pad_to;
};

struct ServeResult {
  bool connected = false;
  bool reset = false;  // peer reset the connection; statistics are still final
  bool stopped = false;
  std::string error;
  std::uint64_t bytes_received = 0;
  SimTime last_arrival{0};
};

// One-connection TCP sink. Binds at construction so the port is known before serving.
class TcpSinkServer {
 public:
  explicit TcpSinkServer(const net::Endpoint& listen);
  std::uint16_t port() const { return listener_.local_port(); }

  ServeResult serve(FrameSink& sink, const std::atomic<bool>& stop, const ServeOptions& options = {});

 private:
  net::Socket listener_;
};

struct TrafficOptions {
  GeneratorSpec spec;
  std::uint32_t payload_words = 0;  // gap structure, as in LinkModel
  std::uint32_t gap_words = 0;
  std::uint32_t frame_payload_bytes = 1024;
  std::uint16_t board_id = 0;
  std::uint64_t seed = 1;
  double duration_s = 1.0;
  net::Endpoint target{"127.0.0.1", kDefaultSinkPort};
};

struct TrafficSummary {
  std::uint64_t frames = 0;
  std::uint64_t bytes = 0;
  double elapsed_s = 0;
  double declared_bps = 0;  // clock x width x duty
  double paced_bps = 0;     // after the gap ratio
  double achieved_bps = 0;
};

double paced_rate(const TrafficOptions& options);

// Sends repeating-payload frames to `target`, token-bucket paced at
// paced_rate(). Throws net::NetError if the connection is refused or reset.
TrafficSummary run_traffic_generator(const TrafficOptions& options, const std::atomic<bool>* stop = nullptr);

}  // namespace readout::transport
