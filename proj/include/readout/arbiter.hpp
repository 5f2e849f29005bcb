#pragma once

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "readout/framing.hpp"

namespace readout {

// Round-robin polling over N inputs at whole-frame granularity. The cursor
// moves to the input after the one served; an idle poll leaves it in place.
class PollingArbiter {
 public:
  explicit PollingArbiter(std::size_t inputs);

  template <std::predicate<std::size_t> ReadyFn>
  std::optional<std::size_t> grant(ReadyFn&& ready) {
    const std::size_t n = grants_.size();
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = (cursor_ + k) % n;
      if (ready(i)) {
        cursor_ = (i + 1) % n;
        ++grants_[i];
        return i;
      }
    }
    return std::nullopt;
  }

  std::optional<std::size_t> grant(std::span<const bool> ready) {
    return grant([&](std::size_t i) { return i < ready.size() && ready[i]; });
  }

  std::size_t inputs() const { return grants_.size(); }
  std::size_t cursor() const { return cursor_; }
  std::uint64_t grants(std::size_t input) const { return grants_.at(input); }

 private:
  std::size_t cursor_ = 0;
  std::vector<std::uint64_t> grants_;
};

struct Grant {
  std::size_t source;
  framing::Frame frame;
};

// Serves one whole frame from the first non-empty queue in polling order.
std::optional<Grant> next_frame(PollingArbiter& arbiter, std::span<std::deque<framing::Frame>> queues);

// Board-to-board hand-off carrying frames from every upstream board. Frames
// are queued per originating board, each queue bounded (in-flight
// reservations included) so a full origin back-pressures only itself.
// Internally locked; shared between the two board tasks it connects.
class UpstreamChannel {
 public:
  static constexpr std::size_t kDefaultDepth = 2;

  explicit UpstreamChannel(std::vector<std::uint16_t> origins, std::size_t depth = kDefaultDepth);

  std::size_t origins() const { return origins_.size(); }
  std::uint16_t origin_id(std::size_t index) const { return origins_.at(index); }
  std::optional<std::size_t> index_of(std::uint16_t board_id) const;

  bool can_reserve(std::uint16_t board_id) const;
  // Claims a slot for a frame about to be sent from `board_id`.
  bool try_reserve(std::uint16_t board_id);
  // Completes a reserved transfer.
  void deliver(framing::Frame frame);
  bool try_push(framing::Frame frame);

  bool ready(std::size_t index) const;
  bool empty() const;
  std::optional<framing::Frame> pop(std::size_t index);
  std::size_t queued(std::size_t index) const;

 private:
  struct Lane {
    std::deque<framing::Frame> frames;
    std::size_t reserved = 0;
  };
  std::size_t lane_of(std::uint16_t board_id) const;

  std::vector<std::uint16_t> origins_;
  std::size_t depth_;
  mutable std::mutex mu_;
  std::vector<Lane> lanes_;
};

}  // namespace readout
