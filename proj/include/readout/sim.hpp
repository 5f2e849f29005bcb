#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "readout/time.hpp"

namespace readout {

// Discrete-event clock. Events at equal timestamps run in insertion order.
class VirtualClock {
 public:
  using Action = std::function<void()>;

  SimTime now() const { return now_; }
  // Throws std::invalid_argument if `at` is in the past.
  void schedule_at(SimTime at, Action action);
  void schedule_in(SimTime delay, Action action) { schedule_at(now_ + delay, std::move(action)); }

  // Runs the earliest pending event; false when none is left.
  bool step();
  // Runs every event with time <= until, then advances now() to `until`.
  void run_until(SimTime until);
  void run();

  std::size_t pending() const { return heap_.size(); }
  std::uint64_t executed() const { return executed_; }

 private:
  struct Event {
    SimTime at;
    std::uint64_t seq;
    Action action;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.seq > b.seq;
    }
  };

  SimTime now_{0};
  std::uint64_t next_seq_ = 0;
  std::uint64_t executed_ = 0;
  std::vector<Event> heap_;
};

}  // namespace readout
