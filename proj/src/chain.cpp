#include "readout/chain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <thread>

#include "readout/regclient.hpp"
#include "readout/sim.hpp"

namespace readout {
namespace {

using transport::FrameSink;
using transport::VirtualLink;

struct Assembly {
  std::vector<Board> boards;
  std::vector<std::shared_ptr<UpstreamChannel>> inputs;  // inputs[0] is null
};

Assembly assemble(const ChainTopology& topo) {
  Assembly a;
  const std::size_t n = topo.boards.size();
  a.boards.reserve(n);
  for (const auto& cfg : topo.boards) a.boards.emplace_back(cfg, topo.seed);
  a.inputs.resize(n);
  std::vector<std::uint16_t> origins;
  for (std::size_t i = 1; i < n; ++i) {
    origins.push_back(topo.boards[i - 1].board_id);
    a.inputs[i] = std::make_shared<UpstreamChannel>(origins, topo.channel_depth);
  }
  for (std::size_t i = 0; i < n; ++i) a.boards[i].connect(a.inputs[i], i + 1 < n ? a.inputs[i + 1] : nullptr);
  return a;
}

std::size_t board_index(const ChainTopology& topo, std::uint16_t board_id) {
  for (std::size_t i = 0; i < topo.boards.size(); ++i) {
    if (topo.boards[i].board_id == board_id) return i;
  }
  throw ConfigError("unknown board_id " + std::to_string(board_id));
}

regproto::RegPacket make_op_packet(const RegisterOp& op, std::uint8_t seq) {
  return op.write ? regproto::make_write(seq, op.addr, op.values) : regproto::make_read(seq, op.addr, op.count);
}

BoardReport report_board(const Board& b) {
  BoardReport r;
  r.board_id = b.id();
  r.stats = b.stats();
  r.frame_ids_issued = b.next_frame_id();
  r.accepted = b.fifo().pushes_accepted();
  r.overflow_count = b.fifo().overflow_count();
  r.peak_occupancy_bytes = b.fifo().peak_occupancy_bytes();
  r.final_occupancy_bytes = b.fifo().occupancy_bytes();
  r.udp_port = b.config().udp_port;
  r.payload = b.config().payload;
  for (const auto& [addr, e] : b.registers().entries()) r.registers[addr] = e.value;
  return r;
}

void finalize(ChainResult& r, const FrameSink& sink, const ChainTopology& topo) {
  r.audit = sink.audit();
  r.report = make_report(sink, topo.window, topo.histogram);
  if (r.sink_local) r.audit_failures = conservation_failures(r.audit, r.boards, r.report.total_bytes);
}

}  // namespace

std::vector<std::string> conservation_failures(const transport::SinkAudit& audit,
                                               const std::vector<BoardReport>& boards, std::uint64_t report_bytes) {
  std::vector<std::string> out;
  if (!audit.errors.empty()) {
    out.push_back(std::to_string(audit.errors.size()) + " framing errors, first: " + audit.errors.front().describe());
  }
  if (audit.frame_bytes != report_bytes) {
    out.push_back("sink audit counted " + std::to_string(audit.frame_bytes) + " bytes, report holds " +
                  std::to_string(report_bytes));
  }
  for (const auto& b : boards) {
    const std::string who = "board " + std::to_string(b.board_id) + ": ";
    auto it = audit.boards.find(b.board_id);
    const transport::BoardAudit a = it == audit.boards.end() ? transport::BoardAudit{} : it->second;
    if (a.frames != b.accepted) {
      out.push_back(who + std::to_string(a.frames) + " frames at sink, " + std::to_string(b.accepted) +
                    " accepted by the FIFO");
    }
    if (a.out_of_order != 0) out.push_back(who + std::to_string(a.out_of_order) + " frames out of order");
    std::uint64_t unseen = b.frame_ids_issued;
    if (a.last_frame_id) unseen = *a.first_frame_id + a.missing + (b.frame_ids_issued - 1 - *a.last_frame_id);
    if (unseen != b.overflow_count) {
      out.push_back(who + std::to_string(unseen) + " frame ids never seen, OVERFLOW_COUNT is " +
                    std::to_string(b.overflow_count));
    }
    if (a.content_mismatch != 0) out.push_back(who + std::to_string(a.content_mismatch) + " payload mismatches");
    const std::uint64_t wrong_kind = b.payload == PayloadKind::Keyed ? a.content_generator : a.content_board;
    if (wrong_kind != 0) out.push_back(who + std::to_string(wrong_kind) + " frames carry the wrong payload kind");
  }
  for (const auto& [id, a] : audit.boards) {
    const bool known = std::any_of(boards.begin(), boards.end(), [&](const BoardReport& b) { return b.board_id == id; });
    if (!known) out.push_back("sink saw " + std::to_string(a.frames) + " frames from unknown board " + std::to_string(id));
  }
  return out;
}

measure::ThroughputReport make_report(const FrameSink& sink, SimTime window, const measure::HistogramOptions& hist) {
  const auto& samples = sink.sampler().samples();
  if (!samples.empty()) return measure::summarize(samples, window, hist);
  measure::ThroughputReport r;
  r.window = window;
  r.histogram.hi = hist.max_bps;
  r.histogram.bin_width = hist.max_bps / static_cast<double>(hist.bins);
  r.histogram.counts.assign(hist.bins, 0);
  return r;
}

// ---------------------------------------------------------------------------
// Virtual mode

ChainResult run_virtual_chain(const ChainTopology& topo, const ChainHooks& hooks) {
  topo.validate();
  const std::size_t n = topo.boards.size();
  Assembly a = assemble(topo);
  auto& boards = a.boards;

  std::vector<VirtualLink> links;
  for (std::size_t i = 0; i + 1 < n; ++i) links.emplace_back(topo.links[i]);
  links.emplace_back(topo.tail_link);

  FrameSink sink({topo.seed, topo.window, true});
  if (hooks.on_frame) sink.set_observer(hooks.on_frame);

  ChainResult result;
  result.mode = RunMode::Virtual;
  VirtualClock clock;
  const SimTime end = from_seconds(topo.duration_s);
  std::vector<bool> busy(n, false);
  std::vector<std::uint64_t> tick_token(n, 0);
  std::vector<std::optional<SimTime>> first_overflow(n);
  std::vector<std::uint8_t> wire;

  std::function<void(std::size_t)> try_drain = [&](std::size_t i) {
    if (busy[i]) return;
    const SimTime now = clock.now();
    auto out = boards[i].on_drain_grant(now);
    if (!out) return;
    if (i > 0 && out->source < a.inputs[i]->origins()) {
      clock.schedule_at(now, [&, i] { try_drain(i - 1); });
    }
    const auto tr = links[i].transmit(now, framing::serialized_size(out->frame));
    busy[i] = true;
    clock.schedule_at(tr.done, [&, i, f = std::move(out->frame)]() mutable {
      if (i + 1 < n) {
        boards[i + 1].on_upstream_frame(std::move(f));
        try_drain(i + 1);
      } else {
        wire.clear();
        framing::serialize_frame(f, wire);
        sink.on_bytes(clock.now(), wire);
        result.end_time = clock.now();
      }
    });
    clock.schedule_at(tr.free_at, [&, i] {
      busy[i] = false;
      try_drain(i);
    });
  };

  std::function<void(std::size_t)> schedule_tick = [&](std::size_t i) {
    const auto token = ++tick_token[i];
    const auto t = boards[i].next_generation_time();
    if (!t || *t >= end) return;
    clock.schedule_at(std::max(*t, clock.now()), [&, i, token] {
      if (token != tick_token[i]) return;
      if (boards[i].on_tick(clock.now())) {
        if (!first_overflow[i] && boards[i].fifo().overflow_count() > 0) first_overflow[i] = clock.now();
        try_drain(i);
      }
      schedule_tick(i);
    });
  };

  for (std::size_t i = 0; i < n; ++i) boards[i].power_on(SimTime{0});
  for (std::size_t i = 0; i < n; ++i) schedule_tick(i);

  for (std::size_t k = 0; k < topo.register_ops.size(); ++k) {
    const RegisterOp& op = topo.register_ops[k];
    const std::size_t i = board_index(topo, op.board_id);
    clock.schedule_at(op.at, [&, i, k] {
      const RegisterOp& o = topo.register_ops[k];
      RegisterLogEntry entry{clock.now(), o.board_id, make_op_packet(o, static_cast<std::uint8_t>(k)), {}, {}};
      auto reply = boards[i].on_reg_packet(regproto::encode_packet(entry.request), clock.now());
      if (reply) entry.reply = regproto::decode_packet(*reply);
      result.register_log.push_back(std::move(entry));
      schedule_tick(i);
      try_drain(i);
    });
  }

  if (hooks.on_window) {
    for (SimTime t = topo.window; t <= end; t += topo.window) {
      clock.schedule_at(t, [&] { hooks.on_window(clock.now(), boards); });
    }
  }

  clock.run();
  sink.finish(end);

  for (std::size_t i = 0; i < n; ++i) {
    result.boards.push_back(report_board(boards[i]));
    result.boards.back().first_overflow = first_overflow[i];
  }
  finalize(result, sink, topo);
  return result;
}

// ---------------------------------------------------------------------------
// Real mode

ChainResult run_real_chain(const ChainTopology& topo, const std::atomic<bool>* stop, const ChainHooks& hooks) {
  using Clock = std::chrono::steady_clock;
  topo.validate();
  const std::size_t n = topo.boards.size();
  Assembly a = assemble(topo);
  auto& boards = a.boards;

  ChainResult result;
  result.mode = RunMode::Real;
  result.sink_local = !topo.sink.external;

  std::vector<std::unique_ptr<regproto::RegisterServer>> servers;
  for (const auto& cfg : topo.boards) {
    servers.push_back(std::make_unique<regproto::RegisterServer>(net::Endpoint{"127.0.0.1", cfg.udp_port}));
  }

  FrameSink sink({topo.seed, topo.window, true});
  if (hooks.on_frame) sink.set_observer(hooks.on_frame);
  std::optional<transport::TcpSinkServer> sink_server;
  net::Endpoint target = topo.sink.endpoint;
  if (result.sink_local) {
    sink_server.emplace(topo.sink.endpoint);
    target.port = sink_server->port();
  }
  net::Socket tail = net::tcp_connect(target);

  const SimTime end = from_seconds(topo.duration_s);
  const auto origin = Clock::now();
  auto now_sim = [&] { return std::chrono::duration_cast<SimTime>(Clock::now() - origin); };

  std::atomic<bool> sink_stop{false};
  transport::ServeResult served;
  std::thread sink_thread;
  if (sink_server) {
    sink_thread = std::thread([&] {
      transport::ServeOptions so;
      so.origin = origin;
      so.accept_timeout = std::chrono::seconds(10);
      so.pad_to = end;
      served = sink_server->serve(sink, sink_stop, so);
    });
  }

  std::mutex mu;  // guards result.runtime_errors and result.register_log
  auto fail = [&](std::string what) {
    std::lock_guard lock(mu);
    result.runtime_errors.push_back(std::move(what));
  };
  auto finished = std::make_unique<std::atomic<bool>[]>(n);
  std::vector<std::optional<SimTime>> first_overflow(n);
  std::atomic<bool> abort{false};

  auto board_task = [&](std::size_t i) {
    Board& b = boards[i];
    VirtualLink link(i + 1 < n ? topo.links[i] : topo.tail_link);
    std::vector<std::uint8_t> wire;
    const regproto::RegisterServer::Handler handler = [&](std::span<const std::uint8_t> d) {
      return b.on_reg_packet(d, now_sim());
    };
    try {
      b.power_on(now_sim());
      for (;;) {
        const SimTime now = now_sim();
        const bool generating = now < end && !(stop && stop->load()) && !abort.load();
        while (servers[i]->service(handler, std::chrono::milliseconds(0))) {
        }
        while (generating) {
          const auto t = b.next_generation_time();
          if (!t || *t > now || *t >= end) break;
          if (!b.on_tick(*t)) break;
          if (!first_overflow[i] && b.fifo().overflow_count() > 0) first_overflow[i] = *t;
        }
        if (link.idle(now)) {
          if (auto out = b.on_drain_grant(now)) {
            link.transmit(now, framing::serialized_size(out->frame));
            if (i + 1 < n) {
              a.inputs[i + 1]->deliver(std::move(out->frame));
            } else {
              wire.clear();
              framing::serialize_frame(out->frame, wire);
              net::send_all(tail, wire);
            }
            continue;
          }
        }
        const bool upstream_done = i == 0 || finished[i - 1].load();
        if (!generating && upstream_done && !b.has_pending_frames()) break;
        if (abort.load()) break;
        SimTime wake = now + std::chrono::microseconds(200);
        if (generating) {
          if (auto t = b.next_generation_time()) wake = std::min(wake, *t);
        }
        if (!link.idle(now)) wake = std::min(wake, link.free_at());
        std::this_thread::sleep_until(origin + std::chrono::duration_cast<Clock::duration>(wake));
      }
    } catch (const std::exception& e) {
      fail("board " + std::to_string(b.id()) + ": " + e.what());
      abort = true;
    }
    finished[i] = true;
    if (i + 1 == n) tail.close();
  };

  std::vector<std::thread> tasks;
  for (std::size_t i = 0; i < n; ++i) tasks.emplace_back(board_task, i);

  std::thread control([&] {
    for (std::size_t k = 0; k < topo.register_ops.size(); ++k) {
      const RegisterOp& op = topo.register_ops[k];
      std::this_thread::sleep_until(origin + std::chrono::duration_cast<Clock::duration>(op.at));
      const std::size_t i = board_index(topo, op.board_id);
      RegisterLogEntry entry{now_sim(), op.board_id, make_op_packet(op, 0), {}, {}};
      try {
        regproto::RegClient client({"127.0.0.1", servers[i]->port()});
        entry.reply = client.transact(entry.request);
        entry.request.seq = entry.reply->seq;
      } catch (const std::exception& e) {
        entry.error = e.what();
      }
      std::lock_guard lock(mu);
      result.register_log.push_back(std::move(entry));
    }
  });

  control.join();
  for (auto& t : tasks) t.join();
  if (sink_thread.joinable()) sink_thread.join();
  if (served.reset) fail("sink connection reset: " + served.error);

  for (std::size_t i = 0; i < n; ++i) {
    result.boards.push_back(report_board(boards[i]));
    result.boards.back().first_overflow = first_overflow[i];
    result.boards.back().udp_port = servers[i]->port();
  }
  result.end_time = served.last_arrival;
  if (result.sink_local) {
    finalize(result, sink, topo);
  } else {
    result.report = make_report(sink, topo.window, topo.histogram);
  }
  return result;
}

ChainResult run_chain(const ChainTopology& topology, const std::atomic<bool>* stop) {
  return topology.mode == RunMode::Virtual ? run_virtual_chain(topology) : run_real_chain(topology, stop);
}

// ---------------------------------------------------------------------------

nlohmann::json result_to_json(const ChainResult& r) {
  nlohmann::json boards = nlohmann::json::array();
  for (const auto& b : r.boards) {
    nlohmann::json regs = nlohmann::json::object();
    for (const auto& [addr, v] : b.registers) {
      auto name = regproto::register_name(addr);
      regs[name.empty() ? std::to_string(addr) : std::string(name)] = v;
    }
    boards.push_back({
        {"board_id", b.board_id},
        {"triggers", b.stats.triggers},
        {"generated", b.stats.generated},
        {"accepted", b.accepted},
        {"overflow_count", b.overflow_count},
        {"emitted_local", b.stats.emitted_local},
        {"forwarded", b.stats.forwarded},
        {"bytes_emitted", b.stats.bytes_emitted},
        {"peak_occupancy_bytes", b.peak_occupancy_bytes},
        {"final_occupancy_bytes", b.final_occupancy_bytes},
        {"first_overflow_s", b.first_overflow ? nlohmann::json(to_seconds(*b.first_overflow)) : nlohmann::json()},
        {"udp_port", b.udp_port},
        {"registers", regs},
    });
  }
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : r.register_log) {
    nlohmann::json entry{{"at_s", to_seconds(e.at)},
                         {"board_id", e.board_id},
                         {"op", e.request.op == regproto::Op::Write ? "write" : "read"},
                         {"addr", e.request.addr}};
    if (e.request.op == regproto::Op::Write) entry["values"] = e.request.data;
    if (e.reply) {
      if (e.reply->error) {
        entry["error_code"] = e.reply->error_code;
      } else {
        entry["reply"] = e.reply->data;
      }
    }
    if (!e.error.empty()) entry["error"] = e.error;
    log.push_back(entry);
  }
  return {
      {"mode", to_string(r.mode)},
      {"passed", r.passed()},
      {"sink", r.sink_local ? audit_to_json(r.audit) : nlohmann::json()},
      {"boards", boards},
      {"register_log", log},
      {"runtime_errors", r.runtime_errors},
      {"audit_failures", r.audit_failures},
      {"end_time_s", to_seconds(r.end_time)},
  };
}

void write_run_artifacts(const std::filesystem::path& dir, const measure::ThroughputReport& report,
                         const nlohmann::json& audit) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("samples.csv");
    measure::write_samples_csv(out, report.samples);
  }
  {
    auto out = open("report.txt");
    measure::write_report_text(out, report);
  }
  {
    auto out = open("report.json");
    out << measure::report_to_json(report).dump(2) << '\n';
  }
  {
    auto out = open("audit.json");
    out << audit.dump(2) << '\n';
  }
}

// ---------------------------------------------------------------------------

TrafficRun run_virtual_traffic(const transport::TrafficOptions& options, const transport::LinkModel& link,
                               SimTime window, const measure::HistogramOptions& hist) {
  TrafficRun run;
  run.sent.declared_bps = transport::offered_rate(options.spec);
  run.sent.paced_bps = transport::paced_rate(options);
  FrameSink sink({options.seed, window, true});
  const SimTime end = from_seconds(options.duration_s);

  if (run.sent.paced_bps >= 1) {
    const auto rate = static_cast<std::uint64_t>(std::llround(run.sent.paced_bps));
    const auto payload = repeating_payload(options.seed, options.board_id, options.frame_payload_bytes);
    const std::uint64_t frame_bits = framing::serialized_size(payload.size()) * 8ull;
    VirtualLink vl(link);
    std::vector<std::uint8_t> wire;
    SimTime epoch{0};
    std::uint64_t since_epoch = 0;
    for (std::uint64_t k = 0;; ++k) {
      const SimTime due = epoch + transfer_time(frame_bits * since_epoch, rate);
      const SimTime t = std::max(due, vl.free_at());
      if (t >= end) break;
      if (t > due) {
        // Back-pressured: the bucket holds at most one frame, pacing restarts here.
        epoch = t;
        since_epoch = 0;
      }
      ++since_epoch;
      const auto id = static_cast<std::uint32_t>(k);
      wire.clear();
      framing::serialize_frame(framing::make_frame(options.board_id, id, id, payload), wire);
      sink.on_bytes(vl.transmit(t, wire.size()).done, wire);
      ++run.sent.frames;
      run.sent.bytes += wire.size();
    }
  }
  sink.finish(end);
  run.sent.elapsed_s = options.duration_s;
  run.sent.achieved_bps = static_cast<double>(run.sent.bytes) * 8.0 / options.duration_s;
  run.audit = sink.audit();
  run.report = make_report(sink, window, hist);
  return run;
}

TrafficRun run_loopback_traffic(const transport::TrafficOptions& options, SimTime window,
                                const measure::HistogramOptions& hist) {
  TrafficRun run;
  FrameSink sink({options.seed, window, true});
  transport::TcpSinkServer server({"127.0.0.1", 0});
  transport::TrafficOptions opts = options;
  opts.target = {"127.0.0.1", server.port()};

  std::atomic<bool> stop{false};
  transport::ServeOptions so;
  so.origin = std::chrono::steady_clock::now();
  so.accept_timeout = std::chrono::seconds(10);
  so.pad_to = from_seconds(options.duration_s);
  transport::ServeResult served;
  std::thread sink_thread([&] { served = server.serve(sink, stop, so); });
  try {
    run.sent = transport::run_traffic_generator(opts);
  } catch (...) {
    stop = true;
    sink_thread.join();
    throw;
  }
  sink_thread.join();
  if (served.reset) throw net::NetError(ECONNRESET, "sink connection reset: " + served.error);
  run.audit = sink.audit();
  run.report = make_report(sink, window, hist);
  return run;
}

std::vector<measure::SweepPoint> run_sweep(RunMode mode, std::span<const double> offered_bps,
                                           const transport::TrafficOptions& base, const transport::LinkModel& link,
                                           SimTime window) {
  return measure::linearity_sweep(offered_bps, [&](double offered) {
    transport::TrafficOptions o = base;
    o.payload_words = 0;
    o.gap_words = 0;
    const double full = o.spec.clock_hz * static_cast<double>(o.spec.word_bits);
    if (!(full > 0)) throw ConfigError("generator clock and width must be positive");
    o.spec.duty = offered / full;
    if (o.spec.duty < 0 || o.spec.duty > 1) throw ConfigError("offered rate exceeds the generator's clock x width");
    const TrafficRun run = mode == RunMode::Virtual ? run_virtual_traffic(o, link, window) : run_loopback_traffic(o, window);
    if (!run.audit.errors.empty()) throw std::runtime_error("framing errors at the sink");
    return run.report;
  });
}

}  // namespace readout
