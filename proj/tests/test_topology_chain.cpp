#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "readout/chain.hpp"
#include "readout/regclient.hpp"

using namespace readout;
using nlohmann::json;

namespace {

json one_board(double duration = 1.0) {
  json doc = json::parse(R"({
    "mode": "virtual", "seed": 7,
    "boards": [ { "board_id": 1, "frame_rate_hz": 1000, "frame_payload_bytes": 1024 } ]
  })");
  doc["duration_s"] = duration;
  return doc;
}

json four_boards(double duration) {
  json doc = {{"mode", "virtual"}, {"seed", 3}, {"duration_s", duration}};
  doc["boards"] = json::array();
  for (int i = 1; i <= 4; ++i) doc["boards"].push_back({{"board_id", i}, {"frame_rate_hz", 1000 * i}});
  doc["link"] = {{"rate_bps", 10e9}};
  doc["tail_link"] = {{"rate_bps", 10e9}};
  return doc;
}

std::string samples_csv(const ChainResult& r) {
  std::ostringstream os;
  measure::write_samples_csv(os, r.report.samples);
  return os.str();
}

struct Cli {
  int status;
  std::string out;
};

Cli run_cli(const std::string& args) {
  const std::string cmd = std::string(READOUT_CLI_PATH) + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  REQUIRE(p);
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, p)) out += buf;
  const int st = ::pclose(p);
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("readout_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST_SUITE("topology") {
  TEST_CASE("defaults and round trip") {
    const auto t = parse_topology(one_board());
    CHECK(t.mode == RunMode::Virtual);
    CHECK(t.seed == 7);
    CHECK(t.window == measure::kDefaultWindow);
    REQUIRE(t.boards.size() == 1);
    CHECK(t.boards[0].udp_port == 24576);
    CHECK(t.sink.endpoint.port == 24577);
    CHECK(t.tail_link.rate_bps == 10'000'000'000ull);
    const auto again = parse_topology(topology_to_json(t));
    CHECK(topology_to_json(again) == topology_to_json(t));
  }

  TEST_CASE("shared link is replicated between boards") {
    const auto t = parse_topology(four_boards(1));
    REQUIRE(t.links.size() == 3);
    for (const auto& l : t.links) CHECK(l.rate_bps == 10'000'000'000ull);
    CHECK(t.boards[2].udp_port == 24578);
  }

  TEST_CASE("register ops accept names and numbers") {
    auto doc = one_board();
    doc["register_writes"] = json::array({{{"at_us", 10}, {"board_id", 1}, {"addr", "DATA_RATE_CTRL"}, {"values", {5}}}});
    doc["register_reads"] = json::array({{{"at_us", 5}, {"board_id", 1}, {"addr", "0x14"}, {"count", 2}}});
    const auto t = parse_topology(doc);
    REQUIRE(t.register_ops.size() == 2);
    CHECK_FALSE(t.register_ops[0].write);
    CHECK(t.register_ops[0].addr == regproto::reg::FifoOccupancy);
    CHECK(t.register_ops[1].addr == regproto::reg::DataRateCtrl);
  }

  TEST_CASE("invalid topologies are configuration errors") {
    auto dup = four_boards(1);
    dup["boards"][2]["board_id"] = 1;
    CHECK_THROWS_AS(parse_topology(dup), ConfigError);

    auto five = four_boards(1);
    five["boards"].push_back({{"board_id", 9}});
    CHECK_THROWS_AS(parse_topology(five), ConfigError);
    five["max_boards"] = 5;
    CHECK_NOTHROW(parse_topology(five));

    auto typo = one_board();
    typo["boards"][0]["frame_rate"] = 10;
    CHECK_THROWS_AS(parse_topology(typo), ConfigError);

    auto links = four_boards(1);
    links.erase("link");
    links["links"] = json::array({{{"rate_bps", 1e9}}});
    CHECK_THROWS_AS(parse_topology(links), ConfigError);

    auto unknown_target = one_board();
    unknown_target["register_writes"] = json::array({{{"at_us", 0}, {"board_id", 2}, {"addr", 4}, {"values", {1}}}});
    CHECK_THROWS_AS(parse_topology(unknown_target), ConfigError);

    CHECK_THROWS_AS(parse_topology(json::parse(R"({"boards": []})")), ConfigError);
    CHECK_THROWS_AS(parse_run_mode("simulated"), ConfigError);
  }

  TEST_CASE("shipped topologies load") {
    for (const auto& entry : std::filesystem::directory_iterator(READOUT_TOPOLOGY_DIR)) {
      CAPTURE(entry.path().string());
      CHECK_NOTHROW(load_topology(entry.path()));
    }
  }
}

TEST_SUITE("chain") {
  TEST_CASE("one board at 1 kHz for 1 s delivers 1000 frames") {
    const auto r = run_virtual_chain(parse_topology(one_board()));
    CHECK(r.passed());
    CHECK(r.audit.frames == 1000);
    const auto& b = r.audit.boards.at(1);
    CHECK(*b.first_frame_id == 0);
    CHECK(*b.last_frame_id == 999);
    CHECK(r.boards[0].overflow_count == 0);
    CHECK(r.report.samples.size() == 10000);
  }

  TEST_CASE("chain of one reproduces the board's local stream") {
    const auto topo = parse_topology(one_board(0.05));
    std::vector<framing::Frame> seen;
    ChainHooks hooks;
    hooks.on_frame = [&](SimTime, const framing::Frame& f) { seen.push_back(f); };
    const auto r = run_virtual_chain(topo, hooks);
    REQUIRE(r.passed());
    REQUIRE(seen.size() == 50);
    for (std::uint32_t k = 0; k < seen.size(); ++k) CHECK(seen[k] == generate_frame(topo.boards[0], 7, k, k));
  }

  TEST_CASE("four boards: per-board sequences are complete, ordered and disjoint") {
    std::map<std::uint16_t, std::vector<std::uint32_t>> ids;
    ChainHooks hooks;
    hooks.on_frame = [&](SimTime, const framing::Frame& f) { ids[f.board_id].push_back(f.frame_id); };
    const auto r = run_virtual_chain(parse_topology(four_boards(0.2)), hooks);
    CHECK(r.passed());
    REQUIRE(ids.size() == 4);
    for (std::uint16_t b = 1; b <= 4; ++b) {
      const auto& v = ids[b];
      CHECK(v.size() == 200u * b);
      for (std::uint32_t k = 0; k < v.size(); ++k) CHECK(v[k] == k);
      CHECK(r.audit.boards.at(b).content_board == v.size());
    }
  }

  TEST_CASE("overflow losses are attributed to OVERFLOW_COUNT") {
    auto doc = four_boards(0.05);
    doc["tail_link"] = {{"rate_bps", 3e7}};
    for (auto& b : doc["boards"]) b["fifo_capacity_bytes"] = 20000;
    const auto r = run_virtual_chain(parse_topology(doc));
    CHECK(r.passed());
    std::uint64_t overflow = 0;
    for (const auto& b : r.boards) overflow += b.overflow_count;
    CHECK(overflow > 0);
  }

  TEST_CASE("rates set over the register path give the configured shares") {
    auto topo = load_topology(std::filesystem::path(READOUT_TOPOLOGY_DIR) / "chain4_rates.json");
    topo.duration_s = 0.2;
    const auto r = run_virtual_chain(topo);
    CHECK(r.passed());
    CHECK(r.report.mean_bps == doctest::Approx(5.0e9).epsilon(0.01));
    const double total = static_cast<double>(r.audit.frame_bytes);
    double configured = 0;
    for (const auto& b : topo.boards) configured += b.rate_kbps;
    for (const auto& op : topo.register_ops) configured += op.values.at(0);
    for (const auto& op : topo.register_ops) {
      const double want = op.values.at(0) / configured;
      CHECK(static_cast<double>(r.audit.boards.at(op.board_id).bytes) / total == doctest::Approx(want).epsilon(0.01));
    }
  }

  TEST_CASE("conservation check flags unexplained loss") {
    const auto r = run_virtual_chain(parse_topology(one_board(0.01)));
    REQUIRE(r.passed());
    auto audit = r.audit;
    audit.boards.at(1).missing += 1;
    audit.boards.at(1).frames -= 1;
    CHECK_FALSE(conservation_failures(audit, r.boards, r.report.total_bytes).empty());
  }

  TEST_CASE("identical virtual runs write byte-identical CSVs") {
    const auto topo = parse_topology(four_boards(0.1));
    const auto a = run_virtual_chain(topo);
    const auto b = run_virtual_chain(topo);
    CHECK(samples_csv(a) == samples_csv(b));
    CHECK(result_to_json(a).dump() == result_to_json(b).dump());
  }

  TEST_CASE("artifacts are written") {
    const auto r = run_virtual_chain(parse_topology(one_board(0.01)));
    const auto dir = temp_dir("artifacts");
    write_run_artifacts(dir, r.report, result_to_json(r));
    for (const char* f : {"samples.csv", "report.txt", "report.json", "audit.json"}) CHECK(std::filesystem::exists(dir / f));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("real chain over loopback sockets") {
    auto doc = four_boards(0.3);
    doc["mode"] = "real";
    doc["boards"] = json::array({{{"board_id", 1}, {"udp_port", 0}}, {{"board_id", 2}, {"udp_port", 0}}});
    doc["sink"] = {{"port", 0}};
    doc["register_reads"] = json::array({{{"at_us", 100000}, {"board_id", 2}, {"addr", "BOARD_ID"}}});
    const auto r = run_real_chain(parse_topology(doc));
    for (const auto& e : r.runtime_errors) MESSAGE(e);
    for (const auto& e : r.audit_failures) MESSAGE(e);
    CHECK(r.passed());
    REQUIRE(r.audit.boards.size() == 2);
    for (const auto& [id, a] : r.audit.boards) {
      CHECK(a.missing == 0);
      CHECK(a.frames >= 250);
      CHECK(a.frames <= 301);
    }
    REQUIRE(r.register_log.size() == 1);
    REQUIRE(r.register_log[0].reply);
    CHECK(r.register_log[0].reply->data == std::vector<std::uint32_t>{2});
    for (const auto& b : r.boards) CHECK(b.udp_port != 0);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("duplicate board_id is rejected with exit code 2") {
    const auto dir = temp_dir("cli_dup");
    auto doc = four_boards(0.01);
    doc["boards"][1]["board_id"] = 1;
    std::ofstream(dir / "dup.json") << doc.dump();
    const auto r = run_cli("run-chain --topology " + (dir / "dup.json").string() + " --out " + (dir / "out").string());
    CHECK(r.status == 2);
    CHECK(r.out.find("duplicate board_id") != std::string::npos);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("run-chain writes artifacts and exits 0") {
    const auto dir = temp_dir("cli_run");
    const auto r = run_cli(std::string("run-chain --topology ") + READOUT_TOPOLOGY_DIR + "/single_board.json --duration 0.05 --out " +
                           dir.string());
    CHECK(r.status == 0);
    CHECK(std::filesystem::exists(dir / "samples.csv"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("unknown options exit 2") { CHECK(run_cli("run-chain --bogus").status == 2); }

  TEST_CASE("regctl write, read back, and read-only rejection") {
    auto regs = regproto::RegisterFile::board_map(3);
    regproto::RegisterServer server({"127.0.0.1", 0});
    std::jthread t([&](std::stop_token st) { regproto::serve_registers(server, regs, st); });
    const std::string ep = "--endpoint 127.0.0.1:" + std::to_string(server.port());

    auto w = run_cli("regctl " + ep + " write DATA_RATE_CTRL 100000");
    CHECK(w.status == 0);
    auto r = run_cli("regctl " + ep + " read 0x4");
    CHECK(r.status == 0);
    CHECK(r.out.find("= 100000") != std::string::npos);
    auto ro = run_cli("regctl " + ep + " write OVERFLOW_COUNT 1");
    CHECK(ro.status == 4);
  }

  TEST_CASE("run-daq measures gen-traffic at 100 Mbit/s over loopback within 5%") {
    const auto dir = temp_dir("cli_daq");
    std::uint16_t port = 0;
    {
      net::Socket probe = net::tcp_listen({"127.0.0.1", 0});
      port = probe.local_port();
    }
    Cli daq{};
    std::thread daq_thread([&] {
      daq = run_cli("run-daq --port " + std::to_string(port) + " --out " + dir.string());
    });
    Cli gen{};
    for (int attempt = 0; attempt < 50; ++attempt) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
      gen = run_cli("gen-traffic --target 127.0.0.1:" + std::to_string(port) + " --duty 0.01 --duration 1");
      if (gen.status == 0) break;
    }
    daq_thread.join();
    CHECK(gen.status == 0);
    CHECK(daq.status == 0);
    std::ifstream in(dir / "report.json");
    const json report = json::parse(in);
    CHECK(report.at("mean_bps").get<double>() == doctest::Approx(100e6).epsilon(0.05));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("run-daq finalizes its report on SIGINT") {
    const auto dir = temp_dir("cli_sigint");
    const auto r = run_cli("run-daq --port 0 --out " + dir.string() + " & pid=$!; sleep 0.3; kill -INT $pid; wait $pid");
    CHECK(r.status == 0);
    CHECK(std::filesystem::exists(dir / "report.json"));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("gen-traffic with duty 0 sends nothing") {
    const auto r = run_cli("gen-traffic --mode virtual --duty 0 --duration 0.01");
    CHECK(r.status == 0);
    CHECK(r.out.find("sent 0 frames, 0 bytes") != std::string::npos);
  }

  TEST_CASE("regctl against a silent endpoint exits 3") {
    net::Socket placeholder = net::udp_bind({"127.0.0.1", 0});
    const auto r = run_cli("regctl --endpoint 127.0.0.1:" + std::to_string(placeholder.local_port()) +
                           " --timeout-ms 5 --retries 1 read BOARD_ID");
    CHECK(r.status == 3);
  }
}
