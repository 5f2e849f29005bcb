#include "readout/sim.hpp"

#include <algorithm>
#include <stdexcept>

namespace readout {

void VirtualClock::schedule_at(SimTime at, Action action) {
  if (at < now_) throw std::invalid_argument("cannot schedule an event in the past");
  heap_.push_back(Event{at, next_seq_++, std::move(action)});
  std::push_heap(heap_.begin(), heap_.end(), Later{});
}

bool VirtualClock::step() {
  if (heap_.empty()) return false;
  std::pop_heap(heap_.begin(), heap_.end(), Later{});
  Event ev = std::move(heap_.back());
  heap_.pop_back();
  now_ = ev.at;
  ++executed_;
  ev.action();
  return true;
}

void VirtualClock::run_until(SimTime until) {
  while (!heap_.empty() && heap_.front().at <= until) step();
  if (until > now_) now_ = until;
}

void VirtualClock::run() {
  while (step()) {
  }
}

}  // namespace readout
