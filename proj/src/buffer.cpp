#include "readout/buffer.hpp"

#include <algorithm>

namespace readout {

bool BoundedFrameFifo::push(framing::Frame frame) {
  const std::uint64_t size = framing::serialized_size(frame);
  if (size > capacity_ || occupancy_ > capacity_ - size) {
    ++overflows_;
    return false;
  }
  occupancy_ += size;
  peak_ = std::max(peak_, occupancy_);
  ++accepted_;
  frames_.push_back(std::move(frame));
  return true;
}

std::optional<framing::Frame> BoundedFrameFifo::pop() {
  if (frames_.empty()) return std::nullopt;
  framing::Frame f = std::move(frames_.front());
  frames_.pop_front();
  occupancy_ -= framing::serialized_size(f);
  ++pops_;
  return f;
}

}  // namespace readout
