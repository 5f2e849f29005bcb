#include "readout/transport.hpp"

#include <algorithm>
#include <thread>

namespace readout::transport {

double LinkModel::efficiency() const {
  if (gapless()) return 1.0;
  return static_cast<double>(payload_words) / static_cast<double>(payload_words + gap_words);
}

void LinkModel::validate() const {
  if (rate_bps == 0) throw ConfigError("link rate_bps must be positive");
}

double offered_rate(const GeneratorSpec& spec) {
  return spec.clock_hz * static_cast<double>(spec.word_bits) * spec.duty;
}

VirtualLink::VirtualLink(LinkModel model) : model_(model) { model_.validate(); }

SimTime VirtualLink::words_time(std::uint64_t words) const { return transfer_time(words * kWordBits, model_.rate_bps); }

VirtualLink::Transfer VirtualLink::transmit(SimTime now, std::size_t bytes) {
  const std::uint64_t words = (bytes + 7) / 8;
  const SimTime start = std::max(now, free_at_);
  Transfer tr{start, start, start};
  if (model_.gapless()) {
    tr.done = tr.free_at = start + words_time(words);
  } else {
    const std::uint64_t p = model_.payload_words;
    const std::uint64_t g = model_.gap_words;
    const std::uint64_t gaps_inside = words == 0 ? 0 : (phase_ + words - 1) / p;
    const std::uint64_t gaps_total = (phase_ + words) / p;
    tr.done = start + words_time(words + g * gaps_inside);
    tr.free_at = start + words_time(words + g * gaps_total);
    phase_ = (phase_ + words) % p;
  }
  free_at_ = tr.free_at;
  bytes_ += bytes;
  return tr;
}

std::vector<TimedChunk> virtual_link_transfer(const LinkModel& link, std::span<const TimedChunk> input) {
  VirtualLink vl(link);
  std::vector<TimedChunk> out;
  out.reserve(input.size());
  for (const auto& c : input) out.push_back({vl.transmit(c.t, c.bytes).done, c.bytes});
  return out;
}

// ---------------------------------------------------------------------------

nlohmann::json audit_to_json(const SinkAudit& audit) {
  nlohmann::json boards = nlohmann::json::array();
  for (const auto& [id, b] : audit.boards) {
    boards.push_back({
        {"board_id", id},
        {"frames", b.frames},
        {"bytes", b.bytes},
        {"first_frame_id", b.first_frame_id ? nlohmann::json(*b.first_frame_id) : nlohmann::json()},
        {"last_frame_id", b.last_frame_id ? nlohmann::json(*b.last_frame_id) : nlohmann::json()},
        {"missing", b.missing},
        {"out_of_order", b.out_of_order},
        {"content_board", b.content_board},
        {"content_generator", b.content_generator},
        {"content_mismatch", b.content_mismatch},
    });
  }
  nlohmann::json errors = nlohmann::json::array();
  for (const auto& e : audit.errors) errors.push_back(e.describe());
  return {{"frames", audit.frames},
          {"frame_bytes", audit.frame_bytes},
          {"stream_bytes", audit.stream_bytes},
          {"framing_errors", errors},
          {"boards", boards}};
}

FrameSink::FrameSink(SinkOptions options)
    : options_(options), verifier_(options.seed), sampler_(options.window) {}

void FrameSink::account(SimTime t) {
  for (auto& e : scratch_.errors) audit_.errors.push_back(e);
  for (auto& f : scratch_.frames) {
    const std::uint64_t size = framing::serialized_size(f);
    BoardAudit& b = audit_.boards[f.board_id];
    b.board_id = f.board_id;
    ++b.frames;
    b.bytes += size;
    if (!b.last_frame_id) {
      b.first_frame_id = f.frame_id;
      b.last_frame_id = f.frame_id;
    } else if (f.frame_id > *b.last_frame_id) {
      b.missing += f.frame_id - *b.last_frame_id - 1;
      b.last_frame_id = f.frame_id;
    } else {
      ++b.out_of_order;
    }
    if (options_.verify_content) {
      switch (verifier_.classify(f)) {
        case ContentClass::Keyed: ++b.content_board; break;
        case ContentClass::Repeating: ++b.content_generator; break;
        case ContentClass::Mismatch: ++b.content_mismatch; break;
      }
    }
    ++audit_.frames;
    audit_.frame_bytes += size;
    sampler_.add(t, size);
    if (observer_) observer_(t, f);
  }
  scratch_.errors.clear();
  scratch_.frames.clear();
}

void FrameSink::on_bytes(SimTime t, std::span<const std::uint8_t> bytes) {
  if (finished_) throw std::logic_error("sink already finished");
  audit_.stream_bytes += bytes.size();
  decoder_.feed(bytes, scratch_);
  account(t);
}

void FrameSink::finish(std::optional<SimTime> end) {
  if (finished_) return;
  decoder_.finish(scratch_);
  for (auto& e : scratch_.errors) audit_.errors.push_back(e);
  scratch_.errors.clear();
  sampler_.finish(end);
  finished_ = true;
}

// ---------------------------------------------------------------------------

TcpSinkServer::TcpSinkServer(const net::Endpoint& listen) : listener_(net::tcp_listen(listen)) {}

ServeResult TcpSinkServer::serve(FrameSink& sink, const std::atomic<bool>& stop, const ServeOptions& options) {
  using Clock = std::chrono::steady_clock;
  constexpr std::chrono::milliseconds kPoll{50};
  ServeResult r;

  std::optional<net::Socket> conn;
  const auto accept_start = Clock::now();
  while (!stop.load()) {
    conn = net::tcp_accept(listener_, kPoll);
    if (conn) break;
    if (options.accept_timeout && Clock::now() - accept_start >= *options.accept_timeout) break;
  }
  if (!conn) {
    r.stopped = stop.load();
    sink.finish(options.pad_to);
    return r;
  }
  r.connected = true;

  std::optional<Clock::time_point> origin = options.origin;
  std::vector<std::uint8_t> buf(1 << 20);
  SimTime last{0};
  for (;;) {
    if (stop.load()) {
      r.stopped = true;
      break;
    }
    if (options.max_duration && origin && Clock::now() - *origin >= *options.max_duration) {
      r.stopped = true;
      break;
    }
    if (!net::wait_readable(conn->fd(), kPoll)) continue;
    std::size_t n = 0;
    try {
      n = net::recv_some(*conn, buf);
    } catch (const net::NetError& e) {
      r.reset = true;
      r.error = e.what();
      break;
    }
    if (n == 0) break;
    const auto now = Clock::now();
    if (!origin) origin = now;
    SimTime t = std::chrono::duration_cast<SimTime>(now - *origin);
    t = std::max(t, last);
    last = t;
    sink.on_bytes(t, std::span<const std::uint8_t>(buf.data(), n));
    r.bytes_received += n;
    r.last_arrival = t;
  }
  sink.finish(options.pad_to);
  return r;
}

double paced_rate(const TrafficOptions& options) {
  LinkModel gaps{1, options.payload_words, options.gap_words};
  return offered_rate(options.spec) * gaps.efficiency();
}

TrafficSummary run_traffic_generator(const TrafficOptions& options, const std::atomic<bool>* stop) {
  using Clock = std::chrono::steady_clock;
  TrafficSummary s;
  s.declared_bps = offered_rate(options.spec);
  s.paced_bps = paced_rate(options);
  if (!(s.paced_bps > 0) || !(options.duration_s > 0)) return s;

  net::Socket sock = net::tcp_connect(options.target);
  const auto payload = repeating_payload(options.seed, options.board_id, options.frame_payload_bytes);
  const double frame_bits = static_cast<double>(framing::serialized_size(payload.size())) * 8.0;
  const double interval_s = frame_bits / s.paced_bps;
  std::vector<std::uint8_t> wire;

  const auto t0 = Clock::now();
  for (std::uint64_t k = 0;; ++k) {
    const double due_s = static_cast<double>(k) * interval_s;
    if (due_s >= options.duration_s) break;
    if (stop && stop->load()) break;
    const auto due = t0 + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(due_s));
    if (Clock::now() < due) std::this_thread::sleep_until(due);
    wire.clear();
    const auto id = static_cast<std::uint32_t>(k);
    framing::serialize_frame(framing::make_frame(options.board_id, id, id, payload), wire);
    net::send_all(sock, wire);
    ++s.frames;
    s.bytes += wire.size();
  }
  s.elapsed_s = std::max(options.duration_s, std::chrono::duration<double>(Clock::now() - t0).count());
  s.achieved_bps = static_cast<double>(s.bytes) * 8.0 / s.elapsed_s;
  return s;
}

}  // namespace readout::transport
