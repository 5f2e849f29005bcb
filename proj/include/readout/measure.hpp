#pragma once

// Windowed throughput measurement: fixed-width byte-count windows (100 us by
// default), distribution statistics and the offered-vs-measured sweep table.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "readout/time.hpp"

namespace readout::measure {

inline constexpr SimTime kDefaultWindow = std::chrono::microseconds(100);

struct Arrival {
  SimTime t;
  std::uint64_t bytes;
};

struct ThroughputSample {
  std::uint64_t window_index = 0;
  double t_start_us = 0;
  std::uint64_t bytes = 0;
  double rate_bps = 0;

  friend bool operator==(const ThroughputSample&, const ThroughputSample&) = default;
};

class NonMonotonicTime : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class Empty : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Incremental form of sample_stream. Windows start at t = 0 and every window
// up to the last arrival is emitted, including empty ones.
class StreamingSampler {
 public:
  explicit StreamingSampler(SimTime window = kDefaultWindow);

  void add(SimTime t, std::uint64_t bytes);
  // Closes the open window and pads with empty windows so that [0, end) is covered.
  void finish(std::optional<SimTime> end = std::nullopt);

  SimTime window() const { return window_; }
  const std::vector<ThroughputSample>& samples() const { return samples_; }
  std::uint64_t total_bytes() const { return total_; }

 private:
  void close_through(std::uint64_t index);
  ThroughputSample make_sample(std::uint64_t index, std::uint64_t bytes) const;

  SimTime window_;
  SimTime last_{0};
  bool open_ = false;
  bool finished_ = false;
  std::uint64_t current_index_ = 0;
  std::uint64_t current_bytes_ = 0;
  std::uint64_t total_ = 0;
  std::vector<ThroughputSample> samples_;
};

std::vector<ThroughputSample> sample_stream(std::span<const Arrival> arrivals, SimTime window = kDefaultWindow,
                                            std::optional<SimTime> end = std::nullopt);

struct HistogramOptions {
  std::size_t bins = 64;
  double max_bps = 10e9;
};

struct Histogram {
  double lo = 0;
  double hi = 0;
  double bin_width = 0;
  std::vector<std::uint64_t> counts;  // values >= hi land in the last bin
};

struct ThroughputReport {
  std::vector<ThroughputSample> samples;
  SimTime window{0};
  SimTime duration{0};
  std::uint64_t total_bytes = 0;
  double mean_bps = 0;
  double stddev_bps = 0;
  double min_bps = 0;
  double max_bps = 0;
  Histogram histogram;
};

ThroughputReport summarize(std::span<const ThroughputSample> samples, SimTime window = kDefaultWindow,
                           const HistogramOptions& hist = {});

// CSV header: window_index,t_start_us,bytes,rate_bps
void write_samples_csv(std::ostream& os, std::span<const ThroughputSample> samples);
void write_report_text(std::ostream& os, const ThroughputReport& report);
nlohmann::json report_to_json(const ThroughputReport& report);

// Shortest round-trip decimal form, as written to CSV.
std::string format_number(double v);

// Per-board byte counter behind the THROUGHPUT_COUNT register.
class WindowCounter {
 public:
  explicit WindowCounter(SimTime window = kDefaultWindow) : window_(window) {}

  void add(SimTime t, std::uint64_t bytes);
  // Bytes counted in the most recent window that ended at or before `now`.
  std::uint64_t last_completed(SimTime now) const;

 private:
  SimTime window_;
  std::uint64_t index_ = 0;
  std::uint64_t bytes_ = 0;
  std::uint64_t previous_bytes_ = 0;  // window index_ - 1
};

struct SweepPoint {
  double offered_bps = 0;
  double measured_bps = 0;
  double ratio = 0;  // 1 when both offered and measured are zero
  std::string error;
};

// Runs `run_point` for each offered rate; a throwing point is recorded and the sweep continues.
std::vector<SweepPoint> linearity_sweep(std::span<const double> offered_bps,
                                        const std::function<ThroughputReport(double)>& run_point);
void write_sweep_csv(std::ostream& os, std::span<const SweepPoint> points);
bool measured_monotone(std::span<const SweepPoint> points);

}  // namespace readout::measure
