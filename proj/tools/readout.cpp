// readout: command-line entry points for the readout chain.
//
//   readout run-chain   --topology chain.json [--mode virtual|real] [--out dir]
//   readout run-daq     --port 24577 [--duration 10] [--out dir]
//   readout gen-traffic --target 127.0.0.1:24577 --clock-hz 156.25e6 --duty 0.1
//   readout regctl      --endpoint 127.0.0.1:24576 write DATA_RATE_CTRL 200000
//   readout sweep       --mode virtual --rates 1G,2G,3G [--out dir]
//
// Exit status: 0 ok, 2 configuration error, 3 runtime failure, 4 audit failure.

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "readout/chain.hpp"
#include "readout/regclient.hpp"
#include "readout/topology.hpp"
#include "readout/transport.hpp"

namespace {

using namespace readout;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitAudit = 4;

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

void install_signal_handlers() {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
}

// Accepts plain numbers and k/M/G suffixes: "2.5G", "100M", "1e9".
double parse_rate(const std::string& text) {
  if (text.empty()) throw ConfigError("empty rate");
  double scale = 1;
  std::string num = text;
  switch (text.back()) {
    case 'k': case 'K': scale = 1e3; num.pop_back(); break;
    case 'M': scale = 1e6; num.pop_back(); break;
    case 'G': scale = 1e9; num.pop_back(); break;
    default: break;
  }
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(num, &used);
  } catch (const std::exception&) {
    throw ConfigError("bad rate '" + text + "'");
  }
  if (used != num.size() || v < 0) throw ConfigError("bad rate '" + text + "'");
  return v * scale;
}

std::uint32_t parse_u32(const std::string& text) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &used, 0);
  } catch (const std::exception&) {
    throw ConfigError("bad number '" + text + "'");
  }
  if (used != text.size() || v > 0xFFFFFFFFull) throw ConfigError("bad number '" + text + "'");
  return static_cast<std::uint32_t>(v);
}

std::uint32_t parse_address(const std::string& text) {
  if (auto a = regproto::parse_register_name(text)) return *a;
  return parse_u32(text);
}

std::string hex(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%04X", v);
  return buf;
}

void print_report_line(const measure::ThroughputReport& r) {
  std::cout << "windows " << r.samples.size() << ", total " << r.total_bytes << " bytes, mean "
            << measure::format_number(r.mean_bps / 1e9) << " Gbit/s, stddev "
            << measure::format_number(r.stddev_bps / 1e9) << " Gbit/s\n";
}

// ---------------------------------------------------------------------------

struct RunChainArgs {
  std::string topology;
  std::string mode;
  double duration = 0;
  double window_us = 0;
  std::string out = "out";
  std::uint64_t seed = 0;
  std::uint16_t port = 0;
};

int run_chain_cmd(const RunChainArgs& args, CLI::App& cmd) {
  ChainTopology topo;
  try {
    topo = load_topology(args.topology);
    if (cmd.count("--mode")) topo.mode = parse_run_mode(args.mode);
    if (cmd.count("--duration")) topo.duration_s = args.duration;
    if (cmd.count("--window-us")) topo.window = from_seconds(args.window_us * 1e-6);
    if (cmd.count("--seed")) topo.seed = args.seed;
    if (cmd.count("--port")) topo.sink.endpoint.port = args.port;
    topo.validate();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  ChainResult result;
  try {
    result = run_chain(topo, &g_stop);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }

  try {
    auto audit = result_to_json(result);
    audit["topology"] = topology_to_json(topo);
    write_run_artifacts(args.out, result.report, audit);
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }

  std::cout << to_string(topo.mode) << " chain, " << topo.boards.size() << " boards, " << result.audit.frames
            << " frames at sink\n";
  print_report_line(result.report);
  for (const auto& b : result.boards) {
    std::cout << "  board " << b.board_id << ": generated " << b.stats.generated << ", overflow " << b.overflow_count
              << ", peak fifo " << b.peak_occupancy_bytes << " bytes\n";
  }
  std::cout << "artifacts in " << args.out << '\n';
  for (const auto& e : result.runtime_errors) std::cerr << "runtime failure: " << e << '\n';
  for (const auto& e : result.audit_failures) std::cerr << "audit failure: " << e << '\n';
  if (!result.runtime_errors.empty()) return kExitRuntime;
  if (!result.audit_failures.empty()) return kExitAudit;
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RunDaqArgs {
  std::string listen = "127.0.0.1";
  std::uint16_t port = transport::kDefaultSinkPort;
  double window_us = 100;
  double duration = 0;
  std::string out = "out";
  std::uint64_t seed = 1;
};

int run_daq_cmd(const RunDaqArgs& args) {
  if (!(args.window_us > 0)) {
    std::cerr << "config error: --window-us must be positive\n";
    return kExitConfig;
  }
  const SimTime window = from_seconds(args.window_us * 1e-6);
  transport::FrameSink sink({args.seed, window, true});
  std::optional<transport::TcpSinkServer> server;
  try {
    server.emplace(net::Endpoint{args.listen, args.port});
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  std::cout << "listening on " << args.listen << ':' << server->port() << std::endl;

  transport::ServeOptions so;
  if (args.duration > 0) so.max_duration = std::chrono::duration<double>(args.duration);
  transport::ServeResult served;
  try {
    served = server->serve(sink, g_stop, so);
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }

  const auto report = make_report(sink, window, {});
  auto audit = transport::audit_to_json(sink.audit());
  audit["connected"] = served.connected;
  audit["reset"] = served.reset;
  audit["bytes_received"] = served.bytes_received;
  try {
    write_run_artifacts(args.out, report, audit);
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  std::cout << sink.audit().frames << " frames from " << sink.audit().boards.size() << " sources\n";
  print_report_line(report);
  for (const auto& [id, b] : sink.audit().boards) {
    std::cout << "  board " << id << ": " << b.frames << " frames, " << b.missing << " missing, content board "
              << b.content_board << " / generator " << b.content_generator << " / mismatch " << b.content_mismatch
              << '\n';
  }
  if (served.reset) std::cerr << "connection reset: " << served.error << " (partial statistics kept)\n";
  if (!sink.audit().errors.empty()) {
    std::cerr << "audit failure: " << sink.audit().errors.size() << " framing errors\n";
    return kExitAudit;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GenArgs {
  std::string mode = "real";
  std::string target = "127.0.0.1:24577";
  double clock_hz = 156.25e6;
  unsigned word_bits = 64;
  double duty = 1.0;
  std::uint32_t payload_words = 0;
  std::uint32_t gap_words = 0;
  std::uint32_t frame_bytes = 1024;
  std::uint16_t board_id = 0;
  double duration = 1.0;
  std::uint64_t seed = 1;
  std::string link_rate = "10G";
  std::uint32_t link_payload_words = 0;
  std::uint32_t link_gap_words = 0;
  double window_us = 100;
  std::string out;
};

int gen_traffic_cmd(const GenArgs& args) {
  transport::TrafficOptions o;
  transport::LinkModel link;
  RunMode mode{};
  try {
    mode = parse_run_mode(args.mode);
    o.spec = {args.clock_hz, args.word_bits, args.duty};
    if (args.duty < 0 || args.duty > 1) throw ConfigError("--duty must be within [0, 1]");
    if (args.frame_bytes == 0 || args.frame_bytes % 8 != 0) throw ConfigError("--frame-bytes must be a multiple of 8");
    if (!(args.window_us > 0)) throw ConfigError("--window-us must be positive");
    o.payload_words = args.payload_words;
    o.gap_words = args.gap_words;
    o.frame_payload_bytes = args.frame_bytes;
    o.board_id = args.board_id;
    o.duration_s = args.duration;
    o.seed = args.seed;
    if (mode == RunMode::Real) o.target = net::parse_endpoint(args.target);
    link.rate_bps = static_cast<std::uint64_t>(parse_rate(args.link_rate));
    link.payload_words = args.link_payload_words;
    link.gap_words = args.link_gap_words;
    link.validate();
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  transport::TrafficSummary s;
  if (mode == RunMode::Real) {
    try {
      s = transport::run_traffic_generator(o, &g_stop);
    } catch (const net::NetError& e) {
      const bool refused = e.code().value() == ECONNREFUSED;
      std::cerr << (refused ? "connection refused: " : "connection reset: ") << e.what() << '\n';
      return kExitRuntime;
    }
  } else {
    const auto run = run_virtual_traffic(o, link, from_seconds(args.window_us * 1e-6));
    s = run.sent;
    if (!args.out.empty()) write_run_artifacts(args.out, run.report, transport::audit_to_json(run.audit));
    print_report_line(run.report);
  }
  std::cout << "declared " << measure::format_number(s.declared_bps) << " bit/s, paced "
            << measure::format_number(s.paced_bps) << " bit/s\n"
            << "sent " << s.frames << " frames, " << s.bytes << " bytes in " << measure::format_number(s.elapsed_s)
            << " s, achieved " << measure::format_number(s.achieved_bps) << " bit/s\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct RegArgs {
  std::string endpoint = "127.0.0.1:24576";
  unsigned timeout_ms = 100;
  unsigned retries = 8;
  std::string addr;
  unsigned count = 1;
  std::vector<std::string> values;
};

int regctl_cmd(const RegArgs& args, bool write) {
  net::Endpoint ep;
  std::uint32_t addr = 0;
  std::vector<std::uint32_t> values;
  try {
    ep = net::parse_endpoint(args.endpoint);
    addr = parse_address(args.addr);
    for (const auto& v : args.values) values.push_back(parse_u32(v));
    if (write && values.empty()) throw ConfigError("write needs at least one value");
    if (values.size() > regproto::kMaxCount || args.count == 0 || args.count > regproto::kMaxCount) {
      throw ConfigError("register count must be 1..64");
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    regproto::RegClient client(ep, {std::chrono::milliseconds(args.timeout_ms), args.retries});
    std::vector<std::uint32_t> shown;
    if (write) {
      shown = client.write_verified(addr, values).readback;
    } else {
      shown = client.read(addr, static_cast<std::uint8_t>(args.count));
    }
    for (std::size_t i = 0; i < shown.size(); ++i) {
      const auto a = addr + static_cast<std::uint32_t>(4 * i);
      const auto name = regproto::register_name(a);
      std::cout << hex(a) << (name.empty() ? "" : " " + std::string(name)) << " = " << shown[i] << '\n';
    }
    if (write) std::cout << "verified\n";
  } catch (const regproto::RemoteError& e) {
    std::cerr << "error reply: " << e.what() << '\n';
    return kExitAudit;
  } catch (const regproto::VerifyMismatch& e) {
    std::cerr << "verify mismatch: " << e.what() << '\n';
    return kExitAudit;
  } catch (const regproto::Timeout& e) {
    std::cerr << "timeout: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SweepArgs {
  std::string mode = "virtual";
  std::string rates;
  double duration = 0.2;
  std::string link_rate = "10G";
  std::uint32_t link_payload_words = 0;
  std::uint32_t link_gap_words = 0;
  std::uint32_t frame_bytes = 1024;
  double window_us = 100;
  std::uint64_t seed = 1;
  std::string out = "out";
};

int sweep_cmd(const SweepArgs& args) {
  RunMode mode{};
  std::vector<double> rates;
  transport::TrafficOptions base;
  transport::LinkModel link;
  try {
    mode = parse_run_mode(args.mode);
    std::string list = args.rates;
    if (list.empty()) list = mode == RunMode::Virtual ? "0,1G,2G,3G,4G,5G,6G,7G,8G,9G" : "10M,50M,100M";
    std::stringstream ss(list);
    for (std::string item; std::getline(ss, item, ',');) rates.push_back(parse_rate(item));
    link.rate_bps = static_cast<std::uint64_t>(parse_rate(args.link_rate));
    link.payload_words = args.link_payload_words;
    link.gap_words = args.link_gap_words;
    link.validate();
    if (args.frame_bytes == 0 || args.frame_bytes % 8 != 0) throw ConfigError("--frame-bytes must be a multiple of 8");
    if (!(args.window_us > 0) || !(args.duration > 0)) throw ConfigError("--duration and --window-us must be positive");
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  base.frame_payload_bytes = args.frame_bytes;
  base.duration_s = args.duration;
  base.seed = args.seed;

  const auto points = run_sweep(mode, rates, base, link, from_seconds(args.window_us * 1e-6));
  std::filesystem::create_directories(args.out);
  const auto path = std::filesystem::path(args.out) / "sweep.csv";
  std::ofstream csv(path, std::ios::binary);
  measure::write_sweep_csv(csv, points);
  measure::write_sweep_csv(std::cout, points);
  std::cout << "monotone: " << (measure::measured_monotone(points) ? "yes" : "no") << "\nwritten " << path.string()
            << '\n';
  for (const auto& p : points) {
    if (!p.error.empty()) return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  install_signal_handlers();
  CLI::App app{"Readout chain simulator and DAQ tools"};
  app.require_subcommand(1);

  RunChainArgs rc;
  auto* run_chain = app.add_subcommand("run-chain", "Run a chain topology end to end");
  run_chain->add_option("--topology", rc.topology, "Topology JSON file")->required()->envname("READOUT_TOPOLOGY");
  run_chain->add_option("--mode", rc.mode, "virtual or real (overrides the file)")->envname("READOUT_MODE");
  run_chain->add_option("--duration", rc.duration, "Run duration in seconds")->envname("READOUT_DURATION");
  run_chain->add_option("--window-us", rc.window_us, "Sample window in microseconds")->envname("READOUT_WINDOW_US");
  run_chain->add_option("--out", rc.out, "Artifact directory")->envname("READOUT_OUT")->capture_default_str();
  run_chain->add_option("--seed", rc.seed, "Payload seed")->envname("READOUT_SEED");
  run_chain->add_option("--port", rc.port, "Sink TCP port")->envname("READOUT_PORT");

  RunDaqArgs daq;
  auto* run_daq = app.add_subcommand("run-daq", "Receive a frame stream over TCP and measure it");
  run_daq->add_option("--listen", daq.listen, "Listen address")->envname("READOUT_LISTEN")->capture_default_str();
  run_daq->add_option("--port", daq.port, "TCP port")->envname("READOUT_PORT")->capture_default_str();
  run_daq->add_option("--window-us", daq.window_us, "Sample window in microseconds")
      ->envname("READOUT_WINDOW_US")
      ->capture_default_str();
  run_daq->add_option("--duration", daq.duration, "Stop this many seconds after the first byte (0 = until EOF)")
      ->envname("READOUT_DURATION");
  run_daq->add_option("--out", daq.out, "Artifact directory")->envname("READOUT_OUT")->capture_default_str();
  run_daq->add_option("--seed", daq.seed, "Payload seed for content checks")->envname("READOUT_SEED");

  GenArgs gen;
  auto* gen_traffic = app.add_subcommand("gen-traffic", "Send repeating-payload frames at a generator rate");
  gen_traffic->add_option("--mode", gen.mode, "real (TCP) or virtual (simulated link)")
      ->envname("READOUT_MODE")
      ->capture_default_str();
  gen_traffic->add_option("--target", gen.target, "Sink host:port")->envname("READOUT_TARGET")->capture_default_str();
  gen_traffic->add_option("--clock-hz", gen.clock_hz, "Generator clock")->capture_default_str();
  gen_traffic->add_option("--word-bits", gen.word_bits, "Bits per clock")->capture_default_str();
  gen_traffic->add_option("--duty", gen.duty, "Fraction of cycles carrying data")->capture_default_str();
  gen_traffic->add_option("--payload-words", gen.payload_words, "Words between generator gaps (0 = gapless)");
  gen_traffic->add_option("--gap-words", gen.gap_words, "Idle words per gap");
  gen_traffic->add_option("--frame-bytes", gen.frame_bytes, "Frame payload bytes")->capture_default_str();
  gen_traffic->add_option("--board-id", gen.board_id, "Board id written into frame headers");
  gen_traffic->add_option("--duration", gen.duration, "Seconds")->envname("READOUT_DURATION")->capture_default_str();
  gen_traffic->add_option("--seed", gen.seed, "Payload seed")->envname("READOUT_SEED");
  gen_traffic->add_option("--link-rate", gen.link_rate, "Virtual link rate")->capture_default_str();
  gen_traffic->add_option("--link-payload-words", gen.link_payload_words, "Virtual link words between gaps");
  gen_traffic->add_option("--link-gap-words", gen.link_gap_words, "Virtual link idle words per gap");
  gen_traffic->add_option("--window-us", gen.window_us, "Virtual sink window")->envname("READOUT_WINDOW_US");
  gen_traffic->add_option("--out", gen.out, "Virtual mode artifact directory")->envname("READOUT_OUT");

  RegArgs reg;
  auto* regctl = app.add_subcommand("regctl", "Read or write board registers over UDP");
  regctl->require_subcommand(1);
  regctl->add_option("--endpoint", reg.endpoint, "Board host:port")->envname("READOUT_ENDPOINT")->capture_default_str();
  regctl->add_option("--timeout-ms", reg.timeout_ms, "Per-attempt timeout")->capture_default_str();
  regctl->add_option("--retries", reg.retries, "Retransmissions")->capture_default_str();
  auto* reg_read = regctl->add_subcommand("read", "Read registers");
  reg_read->add_option("addr", reg.addr, "Address or register name")->required();
  reg_read->add_option("--count", reg.count, "Number of registers")->capture_default_str();
  auto* reg_write = regctl->add_subcommand("write", "Write registers and verify the read-back");
  reg_write->add_option("addr", reg.addr, "Address or register name")->required();
  reg_write->add_option("values", reg.values, "Values")->required();

  SweepArgs sw;
  auto* sweep = app.add_subcommand("sweep", "Offered-vs-measured linearity sweep");
  sweep->add_option("--mode", sw.mode, "virtual or real")->envname("READOUT_MODE")->capture_default_str();
  sweep->add_option("--rates", sw.rates, "Comma separated offered rates, e.g. 1G,2G");
  sweep->add_option("--duration", sw.duration, "Seconds per point")->envname("READOUT_DURATION")->capture_default_str();
  sweep->add_option("--link-rate", sw.link_rate, "Virtual link rate")->capture_default_str();
  sweep->add_option("--link-payload-words", sw.link_payload_words, "Virtual link words between gaps");
  sweep->add_option("--link-gap-words", sw.link_gap_words, "Virtual link idle words per gap");
  sweep->add_option("--frame-bytes", sw.frame_bytes, "Frame payload bytes")->capture_default_str();
  sweep->add_option("--window-us", sw.window_us, "Sample window")->envname("READOUT_WINDOW_US")->capture_default_str();
  sweep->add_option("--seed", sw.seed, "Payload seed")->envname("READOUT_SEED");
  sweep->add_option("--out", sw.out, "Artifact directory")->envname("READOUT_OUT")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run_chain) return run_chain_cmd(rc, *run_chain);
    if (*run_daq) return run_daq_cmd(daq);
    if (*gen_traffic) return gen_traffic_cmd(gen);
    if (*regctl) return regctl_cmd(reg, static_cast<bool>(*reg_write));
    if (*sweep) return sweep_cmd(sw);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitConfig;
}
