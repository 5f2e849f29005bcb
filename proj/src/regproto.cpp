#include "readout/regproto.hpp"

#include <array>

namespace readout::regproto {
namespace {

constexpr std::uint8_t kKnownFlags = kFlagReply | kFlagError | kFlagWrite;

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint32_t get_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | p[3];
}

bool carries_data(const RegPacket& p) { return !p.error && (p.reply || p.op == Op::Write); }

struct NamedRegister {
  std::string_view name;
  std::uint32_t addr;
};

constexpr std::array<NamedRegister, 7> kNames{{
    {"BOARD_ID", reg::BoardId},
    {"DATA_RATE_CTRL", reg::DataRateCtrl},
    {"FRAME_SIZE", reg::FrameSize},
    {"TRIGGER_CTRL", reg::TriggerCtrl},
    {"THROUGHPUT_COUNT", reg::ThroughputCount},
    {"FIFO_OCCUPANCY", reg::FifoOccupancy},
    {"OVERFLOW_COUNT", reg::OverflowCount},
}};

}  // namespace

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownAddress: return "unknown-address";
    case ErrorCode::ReadOnly: return "read-only";
    case ErrorCode::BadCount: return "bad-count";
    case ErrorCode::Malformed: return "malformed";
    case ErrorCode::InvalidValue: return "invalid-value";
  }
  return "unknown-error";
}

std::string_view to_string(MalformedReason reason) {
  switch (reason) {
    case MalformedReason::BadMagic: return "bad-magic";
    case MalformedReason::Truncated: return "truncated";
    case MalformedReason::TrailingBytes: return "trailing-bytes";
    case MalformedReason::BadCount: return "bad-count";
    case MalformedReason::MisalignedAddress: return "misaligned-address";
    case MalformedReason::BadFlags: return "bad-flags";
  }
  return "unknown";
}

Malformed::Malformed(MalformedReason reason, std::optional<std::uint8_t> seq)
    : std::runtime_error("malformed register packet: " + std::string(to_string(reason))),
      reason_(reason),
      seq_(seq) {}

std::uint8_t RegPacket::flags() const {
  std::uint8_t f = op == Op::Write ? kFlagWrite : 0;
  if (reply) f |= kFlagReply;
  if (error) f |= kFlagError;
  return f;
}

RegPacket make_read(std::uint8_t seq, std::uint32_t addr, std::uint8_t count) {
  return RegPacket{false, false, Op::Read, seq, count, addr, {}, 0};
}

RegPacket make_write(std::uint8_t seq, std::uint32_t addr, std::vector<std::uint32_t> values) {
  const auto count = static_cast<std::uint8_t>(values.size());
  if (values.empty() || values.size() > kMaxCount) throw InvalidPacket("write must carry 1..64 values");
  return RegPacket{false, false, Op::Write, seq, count, addr, std::move(values), 0};
}

RegPacket make_error_reply(Op op, std::uint8_t seq, std::uint32_t addr, ErrorCode code) {
  return RegPacket{true, true, op, seq, 0, addr, {}, static_cast<std::uint8_t>(code)};
}

RegPacket make_error_reply(const RegPacket& request, ErrorCode code) {
  return make_error_reply(request.op, request.seq, request.addr, code);
}

void check(const RegPacket& p) {
  if (p.error) {
    if (!p.reply) throw InvalidPacket("error flag set on a request");
    if (p.count != 0 || !p.data.empty()) throw InvalidPacket("error replies carry no data");
    return;
  }
  if (p.count < 1 || p.count > kMaxCount) throw InvalidPacket("count must be in 1..64");
  if (p.addr % 4 != 0) throw InvalidPacket("address must be 4-byte aligned");
  const std::size_t want = carries_data(p) ? p.count : 0;
  if (p.data.size() != want) throw InvalidPacket("data length does not match count");
}

std::vector<std::uint8_t> encode_packet(const RegPacket& p) {
  check(p);
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + p.data.size() * 4 + 1);
  out.push_back(kMagic);
  out.push_back(p.flags());
  out.push_back(p.seq);
  out.push_back(p.count);
  put_be32(out, p.addr);
  if (p.error) {
    out.push_back(p.error_code);
  } else {
    for (std::uint32_t v : p.data) put_be32(out, v);
  }
  return out;
}

RegPacket decode_packet(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw Malformed(MalformedReason::Truncated, std::nullopt);
  if (bytes[0] != kMagic) throw Malformed(MalformedReason::BadMagic, std::nullopt);
  std::optional<std::uint8_t> seq;
  if (bytes.size() >= 3) seq = bytes[2];
  if (bytes.size() < kHeaderBytes) throw Malformed(MalformedReason::Truncated, seq);

  RegPacket p;
  const std::uint8_t flags = bytes[1];
  if ((flags & ~kKnownFlags) != 0) throw Malformed(MalformedReason::BadFlags, seq);
  p.reply = (flags & kFlagReply) != 0;
  p.error = (flags & kFlagError) != 0;
  p.op = (flags & kFlagWrite) != 0 ? Op::Write : Op::Read;
  p.seq = bytes[2];
  p.count = bytes[3];
  p.addr = get_be32(bytes.data() + 4);

  if (p.error) {
    if (!p.reply) throw Malformed(MalformedReason::BadFlags, seq);
    if (p.count != 0) throw Malformed(MalformedReason::BadCount, seq);
    if (bytes.size() < kHeaderBytes + 1) throw Malformed(MalformedReason::Truncated, seq);
    if (bytes.size() > kHeaderBytes + 1) throw Malformed(MalformedReason::TrailingBytes, seq);
    p.error_code = bytes[kHeaderBytes];
    return p;
  }
  if (p.count < 1 || p.count > kMaxCount) throw Malformed(MalformedReason::BadCount, seq);
  if (p.addr % 4 != 0) throw Malformed(MalformedReason::MisalignedAddress, seq);
  const std::size_t words = carries_data(p) ? p.count : 0;
  const std::size_t want = kHeaderBytes + words * 4;
  if (bytes.size() < want) throw Malformed(MalformedReason::Truncated, seq);
  if (bytes.size() > want) throw Malformed(MalformedReason::TrailingBytes, seq);
  p.data.reserve(words);
  for (std::size_t i = 0; i < words; ++i) p.data.push_back(get_be32(bytes.data() + kHeaderBytes + 4 * i));
  return p;
}

// ---------------------------------------------------------------------------

std::optional<std::uint32_t> parse_register_name(std::string_view name) {
  for (const auto& n : kNames) {
    if (n.name == name) return n.addr;
  }
  return std::nullopt;
}

std::string_view register_name(std::uint32_t addr) {
  for (const auto& n : kNames) {
    if (n.addr == addr) return n.name;
  }
  return {};
}

RegisterFile RegisterFile::board_map(std::uint32_t board_id, std::uint32_t frame_size) {
  RegisterFile rf;
  rf.define(reg::BoardId, Access::ReadOnly, board_id);
  rf.define(reg::DataRateCtrl, Access::ReadWrite, 0);
  rf.define(reg::FrameSize, Access::ReadWrite, frame_size);
  rf.define(reg::TriggerCtrl, Access::ReadWrite, 0);
  rf.define(reg::ThroughputCount, Access::ReadOnly, 0);
  rf.define(reg::FifoOccupancy, Access::ReadOnly, 0);
  rf.define(reg::OverflowCount, Access::ReadOnly, 0);
  return rf;
}

void RegisterFile::define(std::uint32_t addr, Access access, std::uint32_t reset_value) {
  regs_[addr] = Entry{access, reset_value};
}

std::optional<Access> RegisterFile::access(std::uint32_t addr) const {
  auto it = regs_.find(addr);
  if (it == regs_.end()) return std::nullopt;
  return it->second.access;
}

std::uint32_t RegisterFile::read(std::uint32_t addr) const { return regs_.at(addr).value; }

void RegisterFile::set_internal(std::uint32_t addr, std::uint32_t value) { regs_.at(addr).value = value; }

bool RegisterFile::acceptable(std::uint32_t addr, std::uint32_t value) const {
  if (addr == reg::FrameSize) return value >= 8 && value % 8 == 0;
  return true;
}

RegPacket handle_request(const RegPacket& request, RegisterFile& regs) {
  if (request.reply) throw std::invalid_argument("handle_request called with a reply packet");
  if (request.count < 1 || request.count > kMaxCount) return make_error_reply(request, ErrorCode::BadCount);
  if (request.op == Op::Write && request.data.size() != request.count) {
    return make_error_reply(request, ErrorCode::BadCount);
  }

  std::vector<std::uint32_t> addrs;
  addrs.reserve(request.count);
  for (std::uint32_t i = 0; i < request.count; ++i) {
    const std::uint64_t a = std::uint64_t{request.addr} + 4ull * i;
    if (a > 0xFFFFFFFFull || !regs.defined(static_cast<std::uint32_t>(a))) {
      return make_error_reply(request, ErrorCode::UnknownAddress);
    }
    addrs.push_back(static_cast<std::uint32_t>(a));
  }

  if (request.op == Op::Write) {
    for (std::size_t i = 0; i < addrs.size(); ++i) {
      if (regs.access(addrs[i]) == Access::ReadOnly) return make_error_reply(request, ErrorCode::ReadOnly);
      if (!regs.acceptable(addrs[i], request.data[i])) return make_error_reply(request, ErrorCode::InvalidValue);
    }
    for (std::size_t i = 0; i < addrs.size(); ++i) regs.set_internal(addrs[i], request.data[i]);
  }

  RegPacket reply{true, false, request.op, request.seq, request.count, request.addr, {}, 0};
  reply.data.reserve(addrs.size());
  for (std::uint32_t a : addrs) reply.data.push_back(regs.read(a));
  return reply;
}

std::optional<std::vector<std::uint8_t>> handle_datagram(std::span<const std::uint8_t> datagram,
                                                         RegisterFile& regs) {
  RegPacket request;
  try {
    request = decode_packet(datagram);
  } catch (const Malformed& m) {
    if (!m.recoverable_seq()) return std::nullopt;
    // Malformed header: echo what can be read back to the sender.
    const Op op = datagram.size() >= 2 && (datagram[1] & kFlagWrite) ? Op::Write : Op::Read;
    const std::uint32_t addr = datagram.size() >= kHeaderBytes ? get_be32(datagram.data() + 4) : 0;
    if (datagram.size() >= 2 && (datagram[1] & kFlagReply)) return std::nullopt;
    ErrorCode code = ErrorCode::Malformed;
    if (m.reason() == MalformedReason::BadCount) code = ErrorCode::BadCount;
    if (m.reason() == MalformedReason::MisalignedAddress) code = ErrorCode::UnknownAddress;
    return encode_packet(make_error_reply(op, *m.recoverable_seq(), addr, code));
  }
  if (request.reply) return std::nullopt;
  return encode_packet(handle_request(request, regs));
}

}  // namespace readout::regproto
