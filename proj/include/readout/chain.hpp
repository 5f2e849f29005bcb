#pragma once

// Runs a ChainTopology end to end, either under the virtual clock or over
// host sockets and threads, and audits the result.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "readout/board.hpp"
#include "readout/measure.hpp"
#include "readout/regproto.hpp"
#include "readout/topology.hpp"
#include "readout/transport.hpp"

namespace readout {

struct BoardReport {
  std::uint16_t board_id = 0;
  BoardStats stats;
  std::uint32_t frame_ids_issued = 0;
  std::uint64_t accepted = 0;
  std::uint64_t overflow_count = 0;
  std::uint64_t peak_occupancy_bytes = 0;
  std::uint64_t final_occupancy_bytes = 0;
  std::optional<SimTime> first_overflow;
  std::uint16_t udp_port = 0;
  PayloadKind payload = PayloadKind::Keyed;
  std::map<std::uint32_t, std::uint32_t> registers;
};

struct RegisterLogEntry {
  SimTime at{0};
  std::uint16_t board_id = 0;
  regproto::RegPacket request;
  std::optional<regproto::RegPacket> reply;
  std::string error;
};

struct ChainResult {
  RunMode mode = RunMode::Virtual;
  bool sink_local = true;
  transport::SinkAudit audit;
  measure::ThroughputReport report;
  std::vector<BoardReport> boards;
  std::vector<RegisterLogEntry> register_log;
  std::vector<std::string> runtime_errors;
  std::vector<std::string> audit_failures;
  SimTime end_time{0};

  bool passed() const { return runtime_errors.empty() && audit_failures.empty(); }
};

struct ChainHooks {
  // Every frame decoded at the sink, with its arrival time.
  std::function<void(SimTime, const framing::Frame&)> on_frame;
  // Virtual mode only: called at each window boundary up to the run duration.
  std::function<void(SimTime, const std::vector<Board>&)> on_window;
};

ChainResult run_virtual_chain(const ChainTopology& topology, const ChainHooks& hooks = {});
// `stop` ends generation early; frames already generated are still drained.
ChainResult run_real_chain(const ChainTopology& topology, const std::atomic<bool>* stop = nullptr,
                           const ChainHooks& hooks = {});
ChainResult run_chain(const ChainTopology& topology, const std::atomic<bool>* stop = nullptr);

// Loss must be attributable to FIFO overflow: per board, frames seen at the
// sink plus overflow drops equal frame ids issued, ids arrive in order, and
// content matches the board's payload kind. Returns one line per violation.
std::vector<std::string> conservation_failures(const transport::SinkAudit& audit,
                                               const std::vector<BoardReport>& boards, std::uint64_t report_bytes);

// Sink report with a zero-sample fallback for runs that delivered nothing.
measure::ThroughputReport make_report(const transport::FrameSink& sink, SimTime window,
                                      const measure::HistogramOptions& hist);

nlohmann::json result_to_json(const ChainResult& result);

// samples.csv, report.txt, report.json and audit.json under `dir`.
void write_run_artifacts(const std::filesystem::path& dir, const measure::ThroughputReport& report,
                         const nlohmann::json& audit);

// ---------------------------------------------------------------------------
// Single-generator runs (gen-traffic and sweeps)

struct TrafficRun {
  transport::TrafficSummary sent;
  transport::SinkAudit audit;
  measure::ThroughputReport report;
};

// The generator is back-pressured by `link` (it waits, never drops) and
// refills a one-frame token bucket at paced_rate(options).
TrafficRun run_virtual_traffic(const transport::TrafficOptions& options, const transport::LinkModel& link,
                               SimTime window = measure::kDefaultWindow, const measure::HistogramOptions& hist = {});
// Generator and sink over TCP loopback in this process.
TrafficRun run_loopback_traffic(const transport::TrafficOptions& options, SimTime window = measure::kDefaultWindow,
                                const measure::HistogramOptions& hist = {});

// Offered rates are realised with GeneratorSpec duty = offered / (clock x width).
std::vector<measure::SweepPoint> run_sweep(RunMode mode, std::span<const double> offered_bps,
                                           const transport::TrafficOptions& base, const transport::LinkModel& link,
                                           SimTime window = measure::kDefaultWindow);

}  // namespace readout
