#include "readout/measure.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

namespace readout::measure {
namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const bool integral = v == std::trunc(v) && std::abs(v) < 1e18;
  auto [end, ec] = integral ? std::to_chars(buf, buf + sizeof buf, static_cast<std::int64_t>(v))
                            : std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) return "nan";
  return std::string(buf, end);
}

StreamingSampler::StreamingSampler(SimTime window) : window_(window) {
  if (window_.count() <= 0) throw std::invalid_argument("sample window must be positive");
}

ThroughputSample StreamingSampler::make_sample(std::uint64_t index, std::uint64_t bytes) const {
  const double window_us = static_cast<double>(window_.count()) * 1e-6;
  return ThroughputSample{index, static_cast<double>(index) * window_us, bytes,
                          static_cast<double>(bytes) * 8.0 * 1e12 / static_cast<double>(window_.count())};
}

void StreamingSampler::close_through(std::uint64_t index) {
  while (samples_.size() < index) {
    samples_.push_back(make_sample(samples_.size(), current_bytes_));
    current_bytes_ = 0;
  }
}

void StreamingSampler::add(SimTime t, std::uint64_t bytes) {
  if (finished_) throw std::logic_error("sampler already finished");
  if (t < last_ || t.count() < 0) throw NonMonotonicTime("arrival times must be non-decreasing");
  last_ = t;
  close_through(static_cast<std::uint64_t>(t.count() / window_.count()));
  current_bytes_ += bytes;
  total_ += bytes;
  open_ = true;
}

void StreamingSampler::finish(std::optional<SimTime> end) {
  if (finished_) return;
  std::uint64_t target = samples_.size() + (open_ ? 1 : 0);
  if (end && end->count() > 0) {
    const auto w = static_cast<std::uint64_t>(window_.count());
    const auto e = static_cast<std::uint64_t>(end->count());
    target = std::max<std::uint64_t>(target, (e + w - 1) / w);
  }
  close_through(target);
  finished_ = true;
}

std::vector<ThroughputSample> sample_stream(std::span<const Arrival> arrivals, SimTime window,
                                            std::optional<SimTime> end) {
  StreamingSampler sampler(window);
  for (const Arrival& a : arrivals) sampler.add(a.t, a.bytes);
  sampler.finish(end);
  return sampler.samples();
}

ThroughputReport summarize(std::span<const ThroughputSample> samples, SimTime window, const HistogramOptions& hist) {
  if (samples.empty()) throw Empty("no throughput samples to summarize");
  if (hist.bins == 0 || !(hist.max_bps > 0)) throw std::invalid_argument("histogram needs bins and a positive range");

  ThroughputReport r;
  r.samples.assign(samples.begin(), samples.end());
  r.window = window;
  r.duration = window * static_cast<std::int64_t>(samples.size());
  r.min_bps = std::numeric_limits<double>::infinity();
  r.max_bps = -std::numeric_limits<double>::infinity();
  for (const auto& s : samples) {
    r.total_bytes += s.bytes;
    r.min_bps = std::min(r.min_bps, s.rate_bps);
    r.max_bps = std::max(r.max_bps, s.rate_bps);
  }
  r.mean_bps = static_cast<double>(r.total_bytes) * 8.0 / to_seconds(r.duration);

  double sq = 0;
  for (const auto& s : samples) {
    const double d = s.rate_bps - r.mean_bps;
    sq += d * d;
  }
  r.stddev_bps = std::sqrt(sq / static_cast<double>(samples.size()));

  r.histogram.lo = 0;
  r.histogram.hi = hist.max_bps;
  r.histogram.bin_width = hist.max_bps / static_cast<double>(hist.bins);
  r.histogram.counts.assign(hist.bins, 0);
  for (const auto& s : samples) {
    auto bin = static_cast<std::size_t>(std::max(0.0, s.rate_bps / r.histogram.bin_width));
    r.histogram.counts[std::min(bin, hist.bins - 1)]++;
  }
  return r;
}

void write_samples_csv(std::ostream& os, std::span<const ThroughputSample> samples) {
  os << "window_index,t_start_us,bytes,rate_bps\r\n";
  for (const auto& s : samples) {
    os << s.window_index << ',' << format_number(s.t_start_us) << ',' << s.bytes << ','
       << format_number(s.rate_bps) << "\r\n";
  }
}

void write_report_text(std::ostream& os, const ThroughputReport& r) {
  os << "windows:        " << r.samples.size() << '\n'
     << "window_us:      " << format_number(static_cast<double>(r.window.count()) * 1e-6) << '\n'
     << "duration_s:     " << format_number(to_seconds(r.duration)) << '\n'
     << "total_bytes:    " << r.total_bytes << '\n'
     << "mean_bps:       " << format_number(r.mean_bps) << '\n'
     << "stddev_bps:     " << format_number(r.stddev_bps) << '\n'
     << "min_bps:        " << format_number(r.min_bps) << '\n'
     << "max_bps:        " << format_number(r.max_bps) << '\n'
     << "histogram:      " << r.histogram.counts.size() << " bins of "
     << format_number(r.histogram.bin_width) << " bps\n";
  for (std::size_t i = 0; i < r.histogram.counts.size(); ++i) {
    if (r.histogram.counts[i] == 0) continue;
    os << "  [" << format_number(r.histogram.bin_width * static_cast<double>(i)) << ", "
       << format_number(r.histogram.bin_width * static_cast<double>(i + 1)) << "): " << r.histogram.counts[i]
       << '\n';
  }
}

nlohmann::json report_to_json(const ThroughputReport& r) {
  return nlohmann::json{
      {"windows", r.samples.size()},
      {"window_us", static_cast<double>(r.window.count()) * 1e-6},
      {"duration_s", to_seconds(r.duration)},
      {"total_bytes", r.total_bytes},
      {"mean_bps", r.mean_bps},
      {"stddev_bps", r.stddev_bps},
      {"min_bps", r.min_bps},
      {"max_bps", r.max_bps},
      {"histogram",
       {{"lo_bps", r.histogram.lo},
        {"hi_bps", r.histogram.hi},
        {"bin_width_bps", r.histogram.bin_width},
        {"counts", r.histogram.counts}}},
  };
}

void WindowCounter::add(SimTime t, std::uint64_t bytes) {
  const auto idx = static_cast<std::uint64_t>(t.count() / window_.count());
  if (idx == index_) {
    bytes_ += bytes;
    return;
  }
  if (idx < index_) {
    bytes_ += bytes;  // late report; keep it in the open window
    return;
  }
  previous_bytes_ = idx == index_ + 1 ? bytes_ : 0;
  index_ = idx;
  bytes_ = bytes;
}

std::uint64_t WindowCounter::last_completed(SimTime now) const {
  const auto idx = static_cast<std::uint64_t>(now.count() / window_.count());
  if (idx <= index_) return previous_bytes_;
  if (idx == index_ + 1) return bytes_;
  return 0;
}

std::vector<SweepPoint> linearity_sweep(std::span<const double> offered_bps,
                                        const std::function<ThroughputReport(double)>& run_point) {
  std::vector<SweepPoint> out;
  out.reserve(offered_bps.size());
  for (double offered : offered_bps) {
    SweepPoint p;
    p.offered_bps = offered;
    try {
      p.measured_bps = run_point(offered).mean_bps;
      if (offered > 0) {
        p.ratio = p.measured_bps / offered;
      } else {
        p.ratio = p.measured_bps == 0 ? 1.0 : std::numeric_limits<double>::infinity();
      }
    } catch (const std::exception& e) {
      p.measured_bps = std::numeric_limits<double>::quiet_NaN();
      p.ratio = std::numeric_limits<double>::quiet_NaN();
      p.error = e.what();
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_sweep_csv(std::ostream& os, std::span<const SweepPoint> points) {
  os << "offered_bps,measured_bps,ratio,error\r\n";
  for (const auto& p : points) {
    os << format_number(p.offered_bps) << ',' << format_number(p.measured_bps) << ',' << format_number(p.ratio)
       << ',' << csv_field(p.error) << "\r\n";
  }
}

bool measured_monotone(std::span<const SweepPoint> points) {
  std::vector<const SweepPoint*> ok;
  for (const auto& p : points) {
    if (p.error.empty()) ok.push_back(&p);
  }
  std::stable_sort(ok.begin(), ok.end(), [](auto* a, auto* b) { return a->offered_bps < b->offered_bps; });
  for (std::size_t i = 1; i < ok.size(); ++i) {
    if (ok[i]->measured_bps < ok[i - 1]->measured_bps) return false;
  }
  return true;
}

}  // namespace readout::measure
