#pragma once

// ChainTopology: one JSON file describing a full experiment (boards head to
// tail, links, sink, scheduled register traffic, run length and seed).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "readout/board.hpp"
#include "readout/measure.hpp"
#include "readout/net.hpp"
#include "readout/time.hpp"
#include "readout/transport.hpp"

namespace readout {

enum class RunMode { Virtual, Real };

std::string_view to_string(RunMode m);
RunMode parse_run_mode(std::string_view text);  // throws ConfigError

// A register datagram sent to one board at a given run time.
struct RegisterOp {
  SimTime at{0};
  std::uint16_t board_id = 0;
  bool write = true;
  std::uint32_t addr = 0;
  std::vector<std::uint32_t> values;  // write data
  std::uint8_t count = 1;             // read length
};

struct SinkConfig {
  net::Endpoint endpoint{"127.0.0.1", transport::kDefaultSinkPort};
  bool external = false;  // real mode: connect to an already running run-daq
};

struct ChainTopology {
  RunMode mode = RunMode::Virtual;
  std::uint64_t seed = 1;
  double duration_s = 1.0;
  SimTime window = measure::kDefaultWindow;
  std::size_t max_boards = 4;
  std::size_t channel_depth = UpstreamChannel::kDefaultDepth;
  std::vector<BoardConfig> boards;              // head first
  std::vector<transport::LinkModel> links;      // links[i] joins boards[i] to boards[i+1]
  transport::LinkModel tail_link;
  SinkConfig sink;
  std::vector<RegisterOp> register_ops;         // sorted by time
  measure::HistogramOptions histogram;

  void validate() const;  // throws ConfigError
  const BoardConfig& board(std::uint16_t board_id) const;
};

ChainTopology parse_topology(const nlohmann::json& doc);
ChainTopology load_topology(const std::filesystem::path& path);
nlohmann::json topology_to_json(const ChainTopology& topology);

}  // namespace readout
