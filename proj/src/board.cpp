#include "readout/board.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>

namespace readout {
namespace {

constexpr std::uint64_t kRepeatDomain = 0x5EED'0000'0000'0001ull;
constexpr std::uint64_t kKeyedDomain = 0x5EED'0000'0000'0002ull;

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t stream_state(std::uint64_t seed, std::uint64_t domain, std::uint16_t board_id, std::uint32_t frame_id) {
  std::uint64_t s = seed ^ domain;
  std::uint64_t key = (std::uint64_t{board_id} << 32) | frame_id;
  return splitmix64(s) ^ splitmix64(key);
}

void store_be64(std::uint8_t* dst, std::uint64_t w) {
  if constexpr (std::endian::native == std::endian::little) w = __builtin_bswap64(w);
  std::memcpy(dst, &w, 8);
}

std::vector<std::uint8_t> fill(std::uint64_t state, std::size_t length) {
  std::vector<std::uint8_t> out(length);
  std::size_t i = 0;
  for (; i + 8 <= length; i += 8) store_be64(out.data() + i, splitmix64(state));
  if (i < length) {
    std::uint8_t tail[8];
    store_be64(tail, splitmix64(state));
    std::memcpy(out.data() + i, tail, length - i);
  }
  return out;
}

bool keyed_matches(std::uint64_t seed, const framing::Frame& f) {
  std::uint64_t state = stream_state(seed, kKeyedDomain, f.board_id, f.frame_id);
  const std::size_t n = f.payload.size();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    std::uint8_t w[8];
    store_be64(w, splitmix64(state));
    if (std::memcmp(w, f.payload.data() + i, 8) != 0) return false;
  }
  if (i < n) {
    std::uint8_t w[8];
    store_be64(w, splitmix64(state));
    if (std::memcmp(w, f.payload.data() + i, n - i) != 0) return false;
  }
  return true;
}

std::uint32_t clamp32(std::uint64_t v) {
  return static_cast<std::uint32_t>(std::min<std::uint64_t>(v, std::numeric_limits<std::uint32_t>::max()));
}

}  // namespace

void BoardConfig::validate() const {
  if (frame_payload_bytes < 8 || frame_payload_bytes % 8 != 0) {
    throw ConfigError("board " + std::to_string(board_id) + ": frame_payload_bytes must be a positive multiple of 8");
  }
  if (generator_mode == GeneratorMode::TriggerPaced && !(frame_rate_hz > 0 && std::isfinite(frame_rate_hz))) {
    throw ConfigError("board " + std::to_string(board_id) + ": frame_rate_hz must be positive in trigger mode");
  }
  if (!(clock_hz > 0)) throw ConfigError("board " + std::to_string(board_id) + ": clock_hz must be positive");
}

std::vector<std::uint8_t> keyed_payload(std::uint64_t seed, std::uint16_t board_id, std::uint32_t frame_id,
                                        std::size_t length) {
  return fill(stream_state(seed, kKeyedDomain, board_id, frame_id), length);
}

std::vector<std::uint8_t> repeating_payload(std::uint64_t seed, std::uint16_t board_id, std::size_t length) {
  return fill(stream_state(seed, kRepeatDomain, board_id, 0), length);
}

framing::Frame generate_frame(const BoardConfig& config, std::uint64_t seed, std::uint32_t trigger_id,
                              std::uint32_t frame_id) {
  auto payload = config.payload == PayloadKind::Keyed
                     ? keyed_payload(seed, config.board_id, frame_id, config.frame_payload_bytes)
                     : repeating_payload(seed, config.board_id, config.frame_payload_bytes);
  return framing::make_frame(config.board_id, frame_id, trigger_id, std::move(payload));
}

std::string_view to_string(ContentClass c) {
  switch (c) {
    case ContentClass::Keyed: return "board";
    case ContentClass::Repeating: return "generator";
    case ContentClass::Mismatch: return "mismatch";
  }
  return "unknown";
}

ContentClass PayloadVerifier::classify(const framing::Frame& frame) {
  const auto key = std::make_pair(frame.board_id, frame.payload.size());
  auto it = repeating_.find(key);
  if (it == repeating_.end()) {
    it = repeating_.emplace(key, repeating_payload(seed_, frame.board_id, frame.payload.size())).first;
  }
  if (it->second == frame.payload) return ContentClass::Repeating;
  if (keyed_matches(seed_, frame)) return ContentClass::Keyed;
  return ContentClass::Mismatch;
}

// ---------------------------------------------------------------------------

Board::Board(BoardConfig config, std::uint64_t seed)
    : config_(config),
      seed_(seed),
      regs_(regproto::RegisterFile::board_map(config.board_id)),
      fifo_(config.fifo_capacity_bytes) {
  config_.validate();
}

void Board::connect(std::shared_ptr<UpstreamChannel> input, std::shared_ptr<UpstreamChannel> output) {
  input_ = std::move(input);
  output_ = std::move(output);
  arbiter_ = PollingArbiter((input_ ? input_->origins() : 0) + 1);
}

void Board::power_on(SimTime now) {
  const auto write = regproto::make_write(
      0, regproto::reg::DataRateCtrl,
      {config_.rate_kbps, config_.frame_payload_bytes, config_.trigger_enable ? 1u : 0u});
  on_reg_packet(regproto::encode_packet(write), now);
}

bool Board::enabled() const { return (regs_.read(regproto::reg::TriggerCtrl) & 1u) != 0; }

SimTime Board::trigger_time(std::uint64_t tick) const {
  const long double ps = static_cast<long double>(tick) * 1e12L / static_cast<long double>(config_.frame_rate_hz);
  return SimTime{static_cast<std::int64_t>(std::llround(ps))};
}

void Board::latch(SimTime now) {
  active_payload_ = regs_.read(regproto::reg::FrameSize);
  active_rate_bps_ = std::uint64_t{regs_.read(regproto::reg::DataRateCtrl)} * 1000;
  running_ = enabled() && active_rate_bps_ > 0;
  epoch_ = now;
  emitted_since_epoch_ = 0;
  next_emission_ = now;
}

std::optional<SimTime> Board::next_generation_time() const {
  if (config_.generator_mode == GeneratorMode::TriggerPaced) return trigger_time(next_tick_);
  if (!running_) return std::nullopt;
  return next_emission_;
}

void Board::generate(std::uint32_t trigger_id) {
  const std::uint32_t frame_id = next_frame_id_++;
  const std::uint32_t size = config_.generator_mode == GeneratorMode::RatePaced
                                 ? active_payload_
                                 : regs_.read(regproto::reg::FrameSize);
  std::vector<std::uint8_t> payload;
  if (config_.payload == PayloadKind::Repeating) {
    if (repeat_cache_.size() != size) repeat_cache_ = repeating_payload(seed_, config_.board_id, size);
    payload = repeat_cache_;
  } else {
    payload = keyed_payload(seed_, config_.board_id, frame_id, size);
  }
  ++stats_.generated;
  fifo_.push(framing::make_frame(config_.board_id, frame_id, trigger_id, std::move(payload)));
}

bool Board::on_tick(SimTime now) {
  if (config_.generator_mode == GeneratorMode::TriggerPaced) {
    if (now < trigger_time(next_tick_)) return false;
    const auto tick = next_tick_++;
    ++stats_.triggers;
    if (!enabled()) return false;
    generate(static_cast<std::uint32_t>(tick));
    return true;
  }

  if (!running_ || now < next_emission_) return false;
  const SimTime boundary = next_emission_;
  // Register changes take effect here, between frames.
  if (regs_.read(regproto::reg::FrameSize) != active_payload_ ||
      std::uint64_t{regs_.read(regproto::reg::DataRateCtrl)} * 1000 != active_rate_bps_ || !enabled()) {
    latch(boundary);
    if (!running_) return false;
  }
  ++stats_.triggers;
  generate(static_cast<std::uint32_t>(stats_.triggers - 1));
  ++emitted_since_epoch_;
  const std::uint64_t bits = framing::serialized_size(active_payload_) * 8ull * emitted_since_epoch_;
  next_emission_ = epoch_ + transfer_time(bits, active_rate_bps_);
  return true;
}

std::optional<FrameOut> Board::on_drain_grant(SimTime now) {
  const std::size_t lanes = input_ ? input_->origins() : 0;
  auto downstream_ok = [&](std::uint16_t origin) { return !output_ || output_->can_reserve(origin); };
  auto chosen = arbiter_.grant([&](std::size_t i) {
    if (i < lanes) return input_->ready(i) && downstream_ok(input_->origin_id(i));
    return !fifo_.empty() && downstream_ok(config_.board_id);
  });
  if (!chosen) return std::nullopt;

  framing::Frame frame;
  if (*chosen < lanes) {
    frame = std::move(*input_->pop(*chosen));
    ++stats_.forwarded;
  } else {
    frame = std::move(*fifo_.pop());
    ++stats_.emitted_local;
  }
  if (output_ && !output_->try_reserve(frame.board_id)) {
    throw std::logic_error("downstream lane filled while a grant was in progress");
  }
  const std::uint64_t size = framing::serialized_size(frame);
  emitted_counter_.add(now, size);
  stats_.bytes_emitted += size;
  return FrameOut{*chosen, std::move(frame)};
}

void Board::refresh_status(SimTime now) {
  regs_.set_internal(regproto::reg::ThroughputCount, clamp32(emitted_counter_.last_completed(now)));
  regs_.set_internal(regproto::reg::FifoOccupancy, clamp32(fifo_.occupancy_bytes()));
  regs_.set_internal(regproto::reg::OverflowCount, clamp32(fifo_.overflow_count()));
}

std::optional<std::vector<std::uint8_t>> Board::on_reg_packet(std::span<const std::uint8_t> datagram, SimTime now) {
  ++stats_.reg_packets;
  refresh_status(now);
  auto reply = regproto::handle_datagram(datagram, regs_);
  if (config_.generator_mode == GeneratorMode::RatePaced && !running_) latch(now);
  return reply;
}

void Board::on_upstream_frame(framing::Frame frame) {
  if (!input_) throw std::logic_error("board at the chain head has no upstream input");
  input_->deliver(std::move(frame));
}

std::vector<BoardOutput> Board::step(BoardEvent event, SimTime now) {
  std::vector<BoardOutput> out;
  std::visit(
      [&](auto& ev) {
        using T = std::decay_t<decltype(ev)>;
        if constexpr (std::is_same_v<T, TriggerTick>) {
          on_tick(now);
        } else if constexpr (std::is_same_v<T, DrainGrant>) {
          if (auto f = on_drain_grant(now)) out.emplace_back(std::move(*f));
        } else if constexpr (std::is_same_v<T, RegPacketIn>) {
          if (auto r = on_reg_packet(ev.datagram, now)) out.emplace_back(RegReply{std::move(*r)});
        } else {
          on_upstream_frame(std::move(ev.frame));
        }
      },
      event);
  return out;
}

bool Board::has_pending_frames() const { return !fifo_.empty() || (input_ && !input_->empty()); }

}  // namespace readout
