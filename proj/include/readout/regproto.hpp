#pragma once

// Slow-control register access over UDP.
//
// Datagram layout (big-endian):
//
//   byte 0     magic 0xA5
//   byte 1     flags: bit7 reply, bit6 error, bit0 op (0 read, 1 write)
//   byte 2     sequence id
//   byte 3     register count (1..64; 0 in error replies)
//   byte 4-7   base address, 4-byte aligned
//   byte 8..   count x 32-bit values (write requests and successful replies)
//              or a single error-code byte (error replies)

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace readout::regproto {

inline constexpr std::uint8_t kMagic = 0xA5;
inline constexpr std::uint8_t kFlagReply = 0x80;
inline constexpr std::uint8_t kFlagError = 0x40;
inline constexpr std::uint8_t kFlagWrite = 0x01;
inline constexpr std::size_t kHeaderBytes = 8;
inline constexpr std::uint8_t kMaxCount = 64;
inline constexpr std::uint16_t kDefaultPort = 24576;

enum class Op : std::uint8_t { Read = 0, Write = 1 };

enum class ErrorCode : std::uint8_t {
  UnknownAddress = 0x01,
  ReadOnly = 0x02,
  BadCount = 0x03,
  Malformed = 0x04,
  InvalidValue = 0x05,
};

std::string_view to_string(ErrorCode code);

struct RegPacket {
  bool reply = false;
  bool error = false;
  Op op = Op::Read;
  std::uint8_t seq = 0;
  std::uint8_t count = 1;
  std::uint32_t addr = 0;
  std::vector<std::uint32_t> data;
  std::uint8_t error_code = 0;  // meaningful only when error is set

  std::uint8_t flags() const;
  friend bool operator==(const RegPacket&, const RegPacket&) = default;
};

class InvalidPacket : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class MalformedReason { BadMagic, Truncated, TrailingBytes, BadCount, MisalignedAddress, BadFlags };
std::string_view to_string(MalformedReason reason);

class Malformed : public std::runtime_error {
 public:
  Malformed(MalformedReason reason, std::optional<std::uint8_t> seq);
  MalformedReason reason() const { return reason_; }
  // Set when the header was intact enough to address an error reply.
  std::optional<std::uint8_t> recoverable_seq() const { return seq_; }

 private:
  MalformedReason reason_;
  std::optional<std::uint8_t> seq_;
};

RegPacket make_read(std::uint8_t seq, std::uint32_t addr, std::uint8_t count = 1);
RegPacket make_write(std::uint8_t seq, std::uint32_t addr, std::vector<std::uint32_t> values);
RegPacket make_error_reply(const RegPacket& request, ErrorCode code);
RegPacket make_error_reply(Op op, std::uint8_t seq, std::uint32_t addr, ErrorCode code);

// Throws InvalidPacket if `p` breaks the packet invariants.
void check(const RegPacket& p);

std::vector<std::uint8_t> encode_packet(const RegPacket& p);
RegPacket decode_packet(std::span<const std::uint8_t> bytes);

// ---------------------------------------------------------------------------
// Register map

namespace reg {
inline constexpr std::uint32_t BoardId = 0x0000;
inline constexpr std::uint32_t DataRateCtrl = 0x0004;    // generator rate, kbit/s
inline constexpr std::uint32_t FrameSize = 0x0008;       // payload bytes, multiple of 8
inline constexpr std::uint32_t TriggerCtrl = 0x000C;     // bit0 enable
inline constexpr std::uint32_t ThroughputCount = 0x0010; // bytes emitted in last completed window
inline constexpr std::uint32_t FifoOccupancy = 0x0014;   // bytes
inline constexpr std::uint32_t OverflowCount = 0x0018;   // dropped frames since reset
}  // namespace reg

std::optional<std::uint32_t> parse_register_name(std::string_view name);
std::string_view register_name(std::uint32_t addr);

enum class Access { ReadOnly, ReadWrite };

class RegisterFile {
 public:
  struct Entry {
    Access access;
    std::uint32_t value;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  // The standard readout-board map with BOARD_ID = board_id.
  static RegisterFile board_map(std::uint32_t board_id, std::uint32_t frame_size = 1024);

  void define(std::uint32_t addr, Access access, std::uint32_t reset_value);
  bool defined(std::uint32_t addr) const { return regs_.contains(addr); }
  std::optional<Access> access(std::uint32_t addr) const;
  std::uint32_t read(std::uint32_t addr) const;  // throws std::out_of_range if undefined
  // Internal update path; ignores the access mode.
  void set_internal(std::uint32_t addr, std::uint32_t value);

  // Value check applied to host writes, e.g. FRAME_SIZE must stay a positive multiple of 8.
  bool acceptable(std::uint32_t addr, std::uint32_t value) const;

  const std::map<std::uint32_t, Entry>& entries() const { return regs_; }
  friend bool operator==(const RegisterFile&, const RegisterFile&) = default;

 private:
  std::map<std::uint32_t, Entry> regs_;
};

// Applies a request to the register file and builds the reply. Writes are
// all-or-nothing and their reply carries the values read back after the write.
RegPacket handle_request(const RegPacket& request, RegisterFile& regs);

// Server-side datagram entry point: decode, handle, encode. Returns nothing
// when the datagram is dropped (unrecoverable header or a stray reply).
std::optional<std::vector<std::uint8_t>> handle_datagram(std::span<const std::uint8_t> datagram,
                                                         RegisterFile& regs);

}  // namespace readout::regproto
