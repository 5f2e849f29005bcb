#pragma once

// Frame codec for the SOP/EOP word-stream FIFO interface.
//
// Serialized frame, big-endian within each 64-bit word:
//
//   word 0      magic 0xD00DF00D (upper 32) | payload length in bytes (lower 32)
//   word 1      board_id (16) | reserved (16) | frame_id (32)
//   word 2      trigger_id (32) | reserved (32)
//   word 3..    payload
//   last word   zero (upper 32) | CRC-32 of words 0..n-2 (lower 32)
//
// On a word-stream interface word 0 carries SOP and the checksum word carries
// EOP. On a byte stream (TCP) frames are sent back to back; the magic word
// marks the start and the length field locates the end.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace readout::framing {

inline constexpr std::uint32_t kMagic = 0xD00DF00Du;
inline constexpr std::size_t kWordBytes = 8;
inline constexpr std::size_t kHeaderWords = 3;
inline constexpr std::size_t kOverheadBytes = (kHeaderWords + 1) * kWordBytes;
inline constexpr std::uint32_t kDefaultMaxPayload = 64u << 20;

struct WordEvent {
  std::uint64_t data = 0;
  bool sop = false;
  bool eop = false;
  bool valid = false;

  friend bool operator==(const WordEvent&, const WordEvent&) = default;
};

struct Frame {
  std::uint16_t board_id = 0;
  std::uint32_t frame_id = 0;
  std::uint32_t trigger_id = 0;
  std::vector<std::uint8_t> payload;
  std::uint32_t checksum = 0;

  friend bool operator==(const Frame&, const Frame&) = default;
};

class InvalidFrame : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Builds a frame and fills in its checksum. Throws InvalidFrame on a bad payload length.
Frame make_frame(std::uint16_t board_id, std::uint32_t frame_id, std::uint32_t trigger_id,
                 std::vector<std::uint8_t> payload);

std::uint32_t compute_checksum(const Frame& frame);

constexpr std::size_t serialized_size(std::size_t payload_bytes) {
  return payload_bytes + kOverheadBytes;
}
inline std::size_t serialized_size(const Frame& frame) { return serialized_size(frame.payload.size()); }

// Throws InvalidFrame unless the payload length and checksum invariants hold.
void validate(const Frame& frame);

std::vector<WordEvent> encode_frame(const Frame& frame);

// Appends the wire bytes of `frame` to `out`.
void serialize_frame(const Frame& frame, std::vector<std::uint8_t>& out);
std::vector<std::uint8_t> serialize_frame(const Frame& frame);

enum class ErrorKind {
  EopBeforeSop,      // eop seen with no frame open
  SopWhileOpen,      // sop seen before the open frame's eop
  ChecksumMismatch,  // CRC or checksum-word reserved bits wrong
  LengthMismatch,    // eop position disagrees with the length field
  BadMagic,          // first word of a frame lacks the magic
  BadLength,         // length field zero, not a multiple of 8, or above the limit
  GapInFrame,        // valid=false word between sop and eop
  DataOutsideFrame,  // non-header data where a frame start was expected
  Truncated,         // stream ended inside a frame
};

std::string_view to_string(ErrorKind kind);

struct FramingError {
  ErrorKind kind;
  std::uint64_t offset = 0;  // word index (word decoder) or byte offset (wire decoder)
  std::optional<std::uint16_t> board_id;
  std::optional<std::uint32_t> frame_id;

  std::string describe() const;
  friend bool operator==(const FramingError&, const FramingError&) = default;
};

struct DecodeResult {
  std::vector<Frame> frames;
  std::vector<FramingError> errors;
};

// Incremental decoder over WordEvents. Feeding a stream in any chunking yields
// the same frames and errors as feeding it whole. After an error, words are
// discarded until the next sop.
class StreamDecoder {
 public:
  explicit StreamDecoder(std::uint32_t max_payload = kDefaultMaxPayload) : max_payload_(max_payload) {}

  void feed(std::span<const WordEvent> events, DecodeResult& out);
  DecodeResult feed(std::span<const WordEvent> events);
  // Reports a Truncated error if a frame is open.
  void finish(DecodeResult& out);

  bool in_frame() const { return state_ == State::InFrame; }

 private:
  enum class State { Idle, InFrame, Resync };

  void start(const WordEvent& ev, DecodeResult& out);
  void fail(ErrorKind kind, DecodeResult& out);

  std::uint32_t max_payload_;
  State state_ = State::Idle;
  std::uint64_t position_ = 0;
  std::uint64_t frame_start_ = 0;
  std::vector<std::uint64_t> words_;
  std::uint32_t payload_len_ = 0;
};

DecodeResult decode_stream(std::span<const WordEvent> events);

// Incremental decoder over a back-to-back byte stream of serialized frames.
class WireDecoder {
 public:
  explicit WireDecoder(std::uint32_t max_payload = kDefaultMaxPayload) : max_payload_(max_payload) {}

  void feed(std::span<const std::uint8_t> bytes, DecodeResult& out);
  DecodeResult feed(std::span<const std::uint8_t> bytes);
  void finish(DecodeResult& out);

  std::uint64_t bytes_consumed() const { return offset_; }

 private:
  enum class State { Header, Body, Resync };

  void on_header();
  void on_body_complete(DecodeResult& out);

  std::uint32_t max_payload_;
  State state_ = State::Header;
  std::uint64_t offset_ = 0;  // bytes consumed so far
  std::uint64_t frame_start_ = 0;
  std::vector<std::uint8_t> pending_;  // partial header / trailer bytes
  Frame current_;
  std::size_t body_needed_ = 0;  // payload bytes + checksum word still to read
  std::vector<std::uint8_t> trailer_;
};

}  // namespace readout::framing
