#include "readout/topology.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

namespace readout {
namespace {

using nlohmann::json;

void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
    }
  }
}

template <class T>
T get_or(const json& obj, const char* key, T fallback, std::string_view where) {
  auto it = obj.find(key);
  if (it == obj.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(where) + "." + key + ": wrong type");
  }
}

std::uint32_t parse_addr(const json& v, std::string_view where) {
  if (v.is_number_unsigned()) return v.get<std::uint32_t>();
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (auto a = regproto::parse_register_name(s)) return *a;
    try {
      std::size_t used = 0;
      const auto a = std::stoul(s, &used, 0);
      if (used == s.size()) return static_cast<std::uint32_t>(a);
    } catch (const std::exception&) {
    }
  }
  throw ConfigError(std::string(where) + ".addr: expected a register name or number");
}

transport::LinkModel parse_link(const json& j, std::string_view where) {
  check_keys(j, where, {"rate_bps", "payload_words", "gap_words"});
  transport::LinkModel l;
  const double rate = get_or<double>(j, "rate_bps", static_cast<double>(l.rate_bps), where);
  if (!(rate >= 1) || !std::isfinite(rate)) throw ConfigError(std::string(where) + ".rate_bps must be positive");
  l.rate_bps = static_cast<std::uint64_t>(std::llround(rate));
  l.payload_words = get_or<std::uint32_t>(j, "payload_words", 0, where);
  l.gap_words = get_or<std::uint32_t>(j, "gap_words", 0, where);
  return l;
}

json link_json(const transport::LinkModel& l) {
  return {{"rate_bps", l.rate_bps}, {"payload_words", l.payload_words}, {"gap_words", l.gap_words}};
}

BoardConfig parse_board(const json& j, std::size_t index) {
  const std::string where = "boards[" + std::to_string(index) + "]";
  check_keys(j, where,
             {"board_id", "generator_mode", "payload", "frame_rate_hz", "frame_payload_bytes", "fifo_capacity_bytes",
              "udp_port", "clock_hz", "rate_kbps", "trigger_enable"});
  BoardConfig b;
  b.board_id = get_or<std::uint16_t>(j, "board_id", static_cast<std::uint16_t>(index), where);
  const auto mode = get_or<std::string>(j, "generator_mode", "trigger", where);
  if (mode == "trigger") {
    b.generator_mode = GeneratorMode::TriggerPaced;
  } else if (mode == "rate") {
    b.generator_mode = GeneratorMode::RatePaced;
  } else {
    throw ConfigError(where + ".generator_mode must be \"trigger\" or \"rate\"");
  }
  const auto payload = get_or<std::string>(j, "payload", "keyed", where);
  if (payload == "keyed") {
    b.payload = PayloadKind::Keyed;
  } else if (payload == "repeating") {
    b.payload = PayloadKind::Repeating;
  } else {
    throw ConfigError(where + ".payload must be \"keyed\" or \"repeating\"");
  }
  b.frame_rate_hz = get_or<double>(j, "frame_rate_hz", b.frame_rate_hz, where);
  b.frame_payload_bytes = get_or<std::uint32_t>(j, "frame_payload_bytes", b.frame_payload_bytes, where);
  b.fifo_capacity_bytes = get_or<std::uint64_t>(j, "fifo_capacity_bytes", b.fifo_capacity_bytes, where);
  b.udp_port = get_or<std::uint16_t>(j, "udp_port", static_cast<std::uint16_t>(regproto::kDefaultPort + index),
                                     where);
  b.clock_hz = get_or<double>(j, "clock_hz", b.clock_hz, where);
  b.rate_kbps = get_or<std::uint32_t>(j, "rate_kbps", b.rate_kbps, where);
  b.trigger_enable = get_or<bool>(j, "trigger_enable", b.trigger_enable, where);
  return b;
}

RegisterOp parse_op(const json& j, bool write, std::size_t index) {
  const std::string where = std::string(write ? "register_writes[" : "register_reads[") + std::to_string(index) + "]";
  check_keys(j, where, {"at_us", "board_id", "addr", "values", "count"});
  RegisterOp op;
  op.write = write;
  const double at_us = get_or<double>(j, "at_us", 0.0, where);
  if (!(at_us >= 0)) throw ConfigError(where + ".at_us must be non-negative");
  op.at = from_seconds(at_us * 1e-6);
  if (!j.contains("board_id")) throw ConfigError(where + ".board_id is required");
  op.board_id = get_or<std::uint16_t>(j, "board_id", 0, where);
  if (!j.contains("addr")) throw ConfigError(where + ".addr is required");
  op.addr = parse_addr(j.at("addr"), where);
  if (write) {
    op.values = get_or<std::vector<std::uint32_t>>(j, "values", {}, where);
    if (op.values.empty() || op.values.size() > regproto::kMaxCount) {
      throw ConfigError(where + ".values must hold 1.." + std::to_string(regproto::kMaxCount) + " words");
    }
    op.count = static_cast<std::uint8_t>(op.values.size());
  } else {
    const auto count = get_or<unsigned>(j, "count", 1, where);
    if (count == 0 || count > regproto::kMaxCount) throw ConfigError(where + ".count out of range");
    op.count = static_cast<std::uint8_t>(count);
  }
  return op;
}

}  // namespace

std::string_view to_string(RunMode m) { return m == RunMode::Virtual ? "virtual" : "real"; }

RunMode parse_run_mode(std::string_view text) {
  if (text == "virtual") return RunMode::Virtual;
  if (text == "real") return RunMode::Real;
  throw ConfigError("mode must be \"virtual\" or \"real\"");
}

void ChainTopology::validate() const {
  if (max_boards == 0) throw ConfigError("max_boards must be at least 1");
  if (boards.empty()) throw ConfigError("topology needs at least one board");
  if (boards.size() > max_boards) {
    throw ConfigError("topology has " + std::to_string(boards.size()) + " boards, max_boards is " +
                      std::to_string(max_boards));
  }
  std::set<std::uint16_t> ids;
  for (const auto& b : boards) {
    if (!ids.insert(b.board_id).second) throw ConfigError("duplicate board_id " + std::to_string(b.board_id));
    b.validate();
  }
  if (links.size() != boards.size() - 1) {
    throw ConfigError("need exactly " + std::to_string(boards.size() - 1) + " inter-board links");
  }
  for (const auto& l : links) l.validate();
  tail_link.validate();
  if (!(duration_s > 0) || !std::isfinite(duration_s)) throw ConfigError("duration_s must be positive");
  if (window.count() <= 0) throw ConfigError("window_us must be positive");
  if (channel_depth == 0) throw ConfigError("channel_depth must be at least 1");
  if (histogram.bins == 0 || !(histogram.max_bps > 0)) throw ConfigError("histogram needs bins and max_bps > 0");
  for (const auto& op : register_ops) {
    if (!ids.contains(op.board_id)) {
      throw ConfigError("register op targets unknown board_id " + std::to_string(op.board_id));
    }
  }
}

const BoardConfig& ChainTopology::board(std::uint16_t board_id) const {
  for (const auto& b : boards) {
    if (b.board_id == board_id) return b;
  }
  throw ConfigError("unknown board_id " + std::to_string(board_id));
}

ChainTopology parse_topology(const json& doc) {
  check_keys(doc, "topology",
             {"mode", "seed", "duration_s", "window_us", "max_boards", "channel_depth", "boards", "link", "links",
              "tail_link", "sink", "register_writes", "register_reads", "histogram"});
  ChainTopology t;
  t.mode = parse_run_mode(get_or<std::string>(doc, "mode", "virtual", "topology"));
  t.seed = get_or<std::uint64_t>(doc, "seed", t.seed, "topology");
  t.duration_s = get_or<double>(doc, "duration_s", t.duration_s, "topology");
  const double window_us = get_or<double>(doc, "window_us", 100.0, "topology");
  if (!(window_us > 0)) throw ConfigError("window_us must be positive");
  t.window = from_seconds(window_us * 1e-6);
  t.max_boards = get_or<std::size_t>(doc, "max_boards", t.max_boards, "topology");
  t.channel_depth = get_or<std::size_t>(doc, "channel_depth", t.channel_depth, "topology");

  if (!doc.contains("boards") || !doc.at("boards").is_array()) throw ConfigError("topology.boards must be an array");
  const auto& boards = doc.at("boards");
  for (std::size_t i = 0; i < boards.size(); ++i) t.boards.push_back(parse_board(boards[i], i));

  if (doc.contains("links")) {
    if (!doc.at("links").is_array()) throw ConfigError("topology.links must be an array");
    for (std::size_t i = 0; i < doc.at("links").size(); ++i) {
      t.links.push_back(parse_link(doc.at("links")[i], "links[" + std::to_string(i) + "]"));
    }
  } else {
    const auto shared = doc.contains("link") ? parse_link(doc.at("link"), "link") : transport::LinkModel{};
    if (!t.boards.empty()) t.links.assign(t.boards.size() - 1, shared);
  }
  if (doc.contains("tail_link")) t.tail_link = parse_link(doc.at("tail_link"), "tail_link");

  if (doc.contains("sink")) {
    const auto& s = doc.at("sink");
    check_keys(s, "sink", {"host", "port", "external"});
    t.sink.endpoint.host = get_or<std::string>(s, "host", t.sink.endpoint.host, "sink");
    t.sink.endpoint.port = get_or<std::uint16_t>(s, "port", t.sink.endpoint.port, "sink");
    t.sink.external = get_or<bool>(s, "external", false, "sink");
  }

  for (const char* key : {"register_writes", "register_reads"}) {
    if (!doc.contains(key)) continue;
    if (!doc.at(key).is_array()) throw ConfigError(std::string("topology.") + key + " must be an array");
    const bool write = std::string_view(key) == "register_writes";
    for (std::size_t i = 0; i < doc.at(key).size(); ++i) t.register_ops.push_back(parse_op(doc.at(key)[i], write, i));
  }
  std::stable_sort(t.register_ops.begin(), t.register_ops.end(),
                   [](const RegisterOp& a, const RegisterOp& b) { return a.at < b.at; });

  t.histogram.max_bps = static_cast<double>(t.tail_link.rate_bps);
  if (doc.contains("histogram")) {
    const auto& h = doc.at("histogram");
    check_keys(h, "histogram", {"bins", "max_bps"});
    t.histogram.bins = get_or<std::size_t>(h, "bins", t.histogram.bins, "histogram");
    t.histogram.max_bps = get_or<double>(h, "max_bps", t.histogram.max_bps, "histogram");
  }

  t.validate();
  return t;
}

ChainTopology load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open topology file " + path.string());
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_topology(doc);
}

json topology_to_json(const ChainTopology& t) {
  json boards = json::array();
  for (const auto& b : t.boards) {
    boards.push_back({
        {"board_id", b.board_id},
        {"generator_mode", b.generator_mode == GeneratorMode::TriggerPaced ? "trigger" : "rate"},
        {"payload", b.payload == PayloadKind::Keyed ? "keyed" : "repeating"},
        {"frame_rate_hz", b.frame_rate_hz},
        {"frame_payload_bytes", b.frame_payload_bytes},
        {"fifo_capacity_bytes", b.fifo_capacity_bytes},
        {"udp_port", b.udp_port},
        {"clock_hz", b.clock_hz},
        {"rate_kbps", b.rate_kbps},
        {"trigger_enable", b.trigger_enable},
    });
  }
  json links = json::array();
  for (const auto& l : t.links) links.push_back(link_json(l));
  json writes = json::array();
  json reads = json::array();
  for (const auto& op : t.register_ops) {
    json o{{"at_us", static_cast<double>(op.at.count()) * 1e-6}, {"board_id", op.board_id}, {"addr", op.addr}};
    if (op.write) {
      o["values"] = op.values;
      writes.push_back(o);
    } else {
      o["count"] = op.count;
      reads.push_back(o);
    }
  }
  return {
      {"mode", to_string(t.mode)},
      {"seed", t.seed},
      {"duration_s", t.duration_s},
      {"window_us", static_cast<double>(t.window.count()) * 1e-6},
      {"max_boards", t.max_boards},
      {"channel_depth", t.channel_depth},
      {"boards", boards},
      {"links", links},
      {"tail_link", link_json(t.tail_link)},
      {"sink", {{"host", t.sink.endpoint.host}, {"port", t.sink.endpoint.port}, {"external", t.sink.external}}},
      {"register_writes", writes},
      {"register_reads", reads},
      {"histogram", {{"bins", t.histogram.bins}, {"max_bps", t.histogram.max_bps}}},
  };
}

}  // namespace readout
