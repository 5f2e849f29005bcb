#pragma once

#include <cstdint>
#include <deque>
#include <optional>

#include "readout/framing.hpp"

namespace readout {

// Byte-bounded frame queue standing in for the DDR3 data cache. The producer
// side cannot be back-pressured: a frame that does not fit is dropped whole
// and counted.
class BoundedFrameFifo {
 public:
  static constexpr std::uint64_t kDefaultCapacity = 8ull << 30;

  explicit BoundedFrameFifo(std::uint64_t capacity_bytes = kDefaultCapacity) : capacity_(capacity_bytes) {}

  bool push(framing::Frame frame);
  std::optional<framing::Frame> pop();
  const framing::Frame* front() const { return frames_.empty() ? nullptr : &frames_.front(); }

  bool empty() const { return frames_.empty(); }
  std::size_t size() const { return frames_.size(); }
  std::uint64_t capacity_bytes() const { return capacity_; }
  std::uint64_t occupancy_bytes() const { return occupancy_; }
  std::uint64_t peak_occupancy_bytes() const { return peak_; }
  std::uint64_t overflow_count() const { return overflows_; }
  std::uint64_t pushes_accepted() const { return accepted_; }
  std::uint64_t pops() const { return pops_; }

 private:
  std::uint64_t capacity_;
  std::uint64_t occupancy_ = 0;
  std::uint64_t peak_ = 0;
  std::uint64_t overflows_ = 0;
  std::uint64_t accepted_ = 0;
  std::uint64_t pops_ = 0;
  std::deque<framing::Frame> frames_;
};

}  // namespace readout
