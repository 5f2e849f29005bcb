#pragma once

#include <chrono>
#include <cstdint>

namespace readout {

// Picosecond resolution: one 64-bit word at 10 Gbit/s takes 6.4 ns.
using SimTime = std::chrono::duration<std::int64_t, std::pico>;

constexpr SimTime from_seconds(double s) {
  return SimTime{static_cast<std::int64_t>(s * 1e12 + (s >= 0 ? 0.5 : -0.5))};
}

constexpr double to_seconds(SimTime t) { return static_cast<double>(t.count()) * 1e-12; }

// Time needed to move `bits` at `rate_bps`, rounded up to the next picosecond.
constexpr SimTime transfer_time(std::uint64_t bits, std::uint64_t rate_bps) {
  const auto num = static_cast<unsigned __int128>(bits) * 1'000'000'000'000ULL;
  return SimTime{static_cast<std::int64_t>((num + rate_bps - 1) / rate_bps)};
}

}  // namespace readout
