#include "readout/arbiter.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace readout {

PollingArbiter::PollingArbiter(std::size_t inputs) : grants_(inputs, 0) {
  if (inputs == 0) throw std::invalid_argument("arbiter needs at least one input");
}

std::optional<Grant> next_frame(PollingArbiter& arbiter, std::span<std::deque<framing::Frame>> queues) {
  auto chosen = arbiter.grant([&](std::size_t i) { return i < queues.size() && !queues[i].empty(); });
  if (!chosen) return std::nullopt;
  Grant g{*chosen, std::move(queues[*chosen].front())};
  queues[*chosen].pop_front();
  return g;
}

UpstreamChannel::UpstreamChannel(std::vector<std::uint16_t> origins, std::size_t depth)
    : origins_(std::move(origins)), depth_(depth), lanes_(origins_.size()) {
  if (depth_ == 0) throw std::invalid_argument("channel depth must be positive");
}

std::optional<std::size_t> UpstreamChannel::index_of(std::uint16_t board_id) const {
  auto it = std::find(origins_.begin(), origins_.end(), board_id);
  if (it == origins_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - origins_.begin());
}

std::size_t UpstreamChannel::lane_of(std::uint16_t board_id) const {
  auto idx = index_of(board_id);
  if (!idx) throw std::invalid_argument("frame from board " + std::to_string(board_id) + " has no upstream lane");
  return *idx;
}

bool UpstreamChannel::can_reserve(std::uint16_t board_id) const {
  const std::size_t i = lane_of(board_id);
  std::lock_guard lock(mu_);
  return lanes_[i].frames.size() + lanes_[i].reserved < depth_;
}

bool UpstreamChannel::try_reserve(std::uint16_t board_id) {
  const std::size_t i = lane_of(board_id);
  std::lock_guard lock(mu_);
  Lane& lane = lanes_[i];
  if (lane.frames.size() + lane.reserved >= depth_) return false;
  ++lane.reserved;
  return true;
}

void UpstreamChannel::deliver(framing::Frame frame) {
  const std::size_t i = lane_of(frame.board_id);
  std::lock_guard lock(mu_);
  Lane& lane = lanes_[i];
  if (lane.reserved == 0) throw std::logic_error("delivery without reservation");
  --lane.reserved;
  lane.frames.push_back(std::move(frame));
}

bool UpstreamChannel::try_push(framing::Frame frame) {
  const std::size_t i = lane_of(frame.board_id);
  std::lock_guard lock(mu_);
  Lane& lane = lanes_[i];
  if (lane.frames.size() + lane.reserved >= depth_) return false;
  lane.frames.push_back(std::move(frame));
  return true;
}

bool UpstreamChannel::ready(std::size_t index) const {
  std::lock_guard lock(mu_);
  return !lanes_.at(index).frames.empty();
}

bool UpstreamChannel::empty() const {
  std::lock_guard lock(mu_);
  return std::all_of(lanes_.begin(), lanes_.end(),
                     [](const Lane& l) { return l.frames.empty() && l.reserved == 0; });
}

std::optional<framing::Frame> UpstreamChannel::pop(std::size_t index) {
  std::lock_guard lock(mu_);
  Lane& lane = lanes_.at(index);
  if (lane.frames.empty()) return std::nullopt;
  framing::Frame f = std::move(lane.frames.front());
  lane.frames.pop_front();
  return f;
}

std::size_t UpstreamChannel::queued(std::size_t index) const {
  std::lock_guard lock(mu_);
  return lanes_.at(index).frames.size();
}

}  // namespace readout
