#include "readout/framing.hpp"

#include <algorithm>
#include <sstream>

#include "readout/crc32.hpp"

namespace readout::framing {
namespace {

void put_be64(std::uint8_t* dst, std::uint64_t w) {
  for (int i = 7; i >= 0; --i) {
    dst[i] = static_cast<std::uint8_t>(w & 0xFF);
    w >>= 8;
  }
}

std::uint64_t get_be64(const std::uint8_t* src) {
  std::uint64_t w = 0;
  for (int i = 0; i < 8; ++i) w = (w << 8) | src[i];
  return w;
}

std::uint64_t header_word0(std::uint32_t payload_len) {
  return (static_cast<std::uint64_t>(kMagic) << 32) | payload_len;
}
std::uint64_t header_word1(const Frame& f) {
  return (static_cast<std::uint64_t>(f.board_id) << 48) | f.frame_id;
}
std::uint64_t header_word2(const Frame& f) { return static_cast<std::uint64_t>(f.trigger_id) << 32; }

void check_payload_length(std::size_t len) {
  if (len < kWordBytes || len % kWordBytes != 0 || len > 0xFFFFFFFFu) {
    throw InvalidFrame("frame payload must be a positive multiple of 8 bytes, got " + std::to_string(len));
  }
}

std::uint32_t checksum_of(std::uint64_t w0, std::uint64_t w1, std::uint64_t w2,
                          std::span<const std::uint8_t> payload) {
  std::uint8_t hdr[kHeaderWords * kWordBytes];
  put_be64(hdr, w0);
  put_be64(hdr + 8, w1);
  put_be64(hdr + 16, w2);
  return crc32(payload, crc32(hdr));
}

bool length_ok(std::uint32_t len, std::uint32_t max_payload) {
  return len != 0 && len % kWordBytes == 0 && len <= max_payload;
}

}  // namespace

std::uint32_t compute_checksum(const Frame& frame) {
  return checksum_of(header_word0(static_cast<std::uint32_t>(frame.payload.size())), header_word1(frame),
                     header_word2(frame), frame.payload);
}

Frame make_frame(std::uint16_t board_id, std::uint32_t frame_id, std::uint32_t trigger_id,
                 std::vector<std::uint8_t> payload) {
  check_payload_length(payload.size());
  Frame f{board_id, frame_id, trigger_id, std::move(payload), 0};
  f.checksum = compute_checksum(f);
  return f;
}

void validate(const Frame& frame) {
  check_payload_length(frame.payload.size());
  if (compute_checksum(frame) != frame.checksum) throw InvalidFrame("frame checksum does not match contents");
}

std::vector<WordEvent> encode_frame(const Frame& frame) {
  validate(frame);
  const std::size_t payload_words = frame.payload.size() / kWordBytes;
  std::vector<WordEvent> out;
  out.reserve(payload_words + kHeaderWords + 1);
  out.push_back({header_word0(static_cast<std::uint32_t>(frame.payload.size())), true, false, true});
  out.push_back({header_word1(frame), false, false, true});
  out.push_back({header_word2(frame), false, false, true});
  for (std::size_t i = 0; i < payload_words; ++i) {
    out.push_back({get_be64(frame.payload.data() + i * kWordBytes), false, false, true});
  }
  out.push_back({frame.checksum, false, true, true});
  return out;
}

void serialize_frame(const Frame& frame, std::vector<std::uint8_t>& out) {
  validate(frame);
  const std::size_t base = out.size();
  out.resize(base + serialized_size(frame));
  std::uint8_t* p = out.data() + base;
  put_be64(p, header_word0(static_cast<std::uint32_t>(frame.payload.size())));
  put_be64(p + 8, header_word1(frame));
  put_be64(p + 16, header_word2(frame));
  std::copy(frame.payload.begin(), frame.payload.end(), p + 24);
  put_be64(p + 24 + frame.payload.size(), frame.checksum);
}

std::vector<std::uint8_t> serialize_frame(const Frame& frame) {
  std::vector<std::uint8_t> out;
  serialize_frame(frame, out);
  return out;
}

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::EopBeforeSop: return "eop-before-sop";
    case ErrorKind::SopWhileOpen: return "sop-while-open";
    case ErrorKind::ChecksumMismatch: return "checksum-mismatch";
    case ErrorKind::LengthMismatch: return "length-mismatch";
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::BadLength: return "bad-length";
    case ErrorKind::GapInFrame: return "gap-in-frame";
    case ErrorKind::DataOutsideFrame: return "data-outside-frame";
    case ErrorKind::Truncated: return "truncated";
  }
  return "unknown";
}

std::string FramingError::describe() const {
  std::ostringstream os;
  os << to_string(kind) << " at offset " << offset;
  if (board_id) os << " board " << *board_id;
  if (frame_id) os << " frame " << *frame_id;
  return os.str();
}

// ---------------------------------------------------------------------------
// StreamDecoder

void StreamDecoder::fail(ErrorKind kind, DecodeResult& out) {
  FramingError err{kind, frame_start_, std::nullopt, std::nullopt};
  if (words_.size() >= 2) {
    err.board_id = static_cast<std::uint16_t>(words_[1] >> 48);
    err.frame_id = static_cast<std::uint32_t>(words_[1]);
  }
  out.errors.push_back(err);
  words_.clear();
  state_ = State::Resync;
}

void StreamDecoder::start(const WordEvent& ev, DecodeResult& out) {
  words_.clear();
  frame_start_ = position_;
  const auto magic = static_cast<std::uint32_t>(ev.data >> 32);
  const auto len = static_cast<std::uint32_t>(ev.data);
  if (magic != kMagic) {
    fail(ErrorKind::BadMagic, out);
    return;
  }
  if (!length_ok(len, max_payload_)) {
    fail(ErrorKind::BadLength, out);
    return;
  }
  if (ev.eop) {
    fail(ErrorKind::LengthMismatch, out);
    return;
  }
  payload_len_ = len;
  words_.reserve(kHeaderWords + 1 + len / kWordBytes);
  words_.push_back(ev.data);
  state_ = State::InFrame;
}

void StreamDecoder::feed(std::span<const WordEvent> events, DecodeResult& out) {
  for (const WordEvent& ev : events) {
    if (!ev.valid) {
      if (state_ == State::InFrame) fail(ErrorKind::GapInFrame, out);
      ++position_;
      continue;
    }
    switch (state_) {
      case State::Idle:
        if (ev.sop) {
          start(ev, out);
        } else {
          frame_start_ = position_;
          words_.clear();
          if (ev.eop) {
            out.errors.push_back({ErrorKind::EopBeforeSop, position_, std::nullopt, std::nullopt});
          } else {
            fail(ErrorKind::DataOutsideFrame, out);
          }
        }
        break;
      case State::Resync:
        if (ev.sop) start(ev, out);
        break;
      case State::InFrame: {
        if (ev.sop) {
          fail(ErrorKind::SopWhileOpen, out);
          start(ev, out);
          break;
        }
        const std::size_t expected = kHeaderWords + 1 + payload_len_ / kWordBytes;
        words_.push_back(ev.data);
        if (!ev.eop) {
          if (words_.size() >= expected) fail(ErrorKind::LengthMismatch, out);
          break;
        }
        if (words_.size() != expected) {
          fail(ErrorKind::LengthMismatch, out);
          break;
        }
        Frame f;
        f.board_id = static_cast<std::uint16_t>(words_[1] >> 48);
        f.frame_id = static_cast<std::uint32_t>(words_[1]);
        f.trigger_id = static_cast<std::uint32_t>(words_[2] >> 32);
        f.payload.resize(payload_len_);
        for (std::size_t i = 0; i < payload_len_ / kWordBytes; ++i) {
          put_be64(f.payload.data() + i * kWordBytes, words_[kHeaderWords + i]);
        }
        const std::uint64_t trailer = words_.back();
        const std::uint32_t crc = checksum_of(words_[0], words_[1], words_[2], f.payload);
        if ((trailer >> 32) != 0 || static_cast<std::uint32_t>(trailer) != crc ||
            (words_[1] & 0x0000FFFF00000000ull) != 0 || static_cast<std::uint32_t>(words_[2]) != 0) {
          fail(ErrorKind::ChecksumMismatch, out);
          break;
        }
        f.checksum = crc;
        out.frames.push_back(std::move(f));
        words_.clear();
        state_ = State::Idle;
        break;
      }
    }
    ++position_;
  }
}

DecodeResult StreamDecoder::feed(std::span<const WordEvent> events) {
  DecodeResult out;
  feed(events, out);
  return out;
}

void StreamDecoder::finish(DecodeResult& out) {
  if (state_ == State::InFrame) fail(ErrorKind::Truncated, out);
  state_ = State::Idle;
}

DecodeResult decode_stream(std::span<const WordEvent> events) {
  StreamDecoder dec;
  DecodeResult out = dec.feed(events);
  dec.finish(out);
  return out;
}

// ---------------------------------------------------------------------------
// WireDecoder

void WireDecoder::on_header() {
  const std::uint64_t w0 = get_be64(pending_.data());
  const std::uint64_t w1 = get_be64(pending_.data() + 8);
  const std::uint64_t w2 = get_be64(pending_.data() + 16);
  current_ = Frame{};
  current_.board_id = static_cast<std::uint16_t>(w1 >> 48);
  current_.frame_id = static_cast<std::uint32_t>(w1);
  current_.trigger_id = static_cast<std::uint32_t>(w2 >> 32);
  const auto len = static_cast<std::uint32_t>(w0);
  current_.payload.reserve(len);
  body_needed_ = static_cast<std::size_t>(len) + kWordBytes;
  trailer_.clear();
  state_ = State::Body;
}

void WireDecoder::on_body_complete(DecodeResult& out) {
  const std::uint64_t trailer = get_be64(trailer_.data());
  const std::uint64_t w1 = get_be64(pending_.data() + 8);
  const std::uint64_t w2 = get_be64(pending_.data() + 16);
  const std::uint32_t crc = crc32(current_.payload, crc32(std::span(pending_.data(), 24)));
  pending_.clear();
  state_ = State::Header;
  if ((trailer >> 32) != 0 || static_cast<std::uint32_t>(trailer) != crc || (w1 & 0x0000FFFF00000000ull) != 0 ||
      static_cast<std::uint32_t>(w2) != 0) {
    out.errors.push_back({ErrorKind::ChecksumMismatch, frame_start_, current_.board_id, current_.frame_id});
    return;
  }
  current_.checksum = crc;
  out.frames.push_back(std::move(current_));
  current_ = Frame{};
}

void WireDecoder::feed(std::span<const std::uint8_t> bytes, DecodeResult& out) {
  std::size_t i = 0;
  const std::size_t n = bytes.size();
  while (i < n) {
    if (state_ == State::Body) {
      const std::size_t payload_left = body_needed_ > kWordBytes ? body_needed_ - kWordBytes : 0;
      std::size_t take = std::min(n - i, body_needed_);
      if (payload_left > 0) {
        take = std::min(take, payload_left);
        current_.payload.insert(current_.payload.end(), bytes.begin() + static_cast<std::ptrdiff_t>(i),
                                bytes.begin() + static_cast<std::ptrdiff_t>(i + take));
      } else {
        trailer_.insert(trailer_.end(), bytes.begin() + static_cast<std::ptrdiff_t>(i),
                        bytes.begin() + static_cast<std::ptrdiff_t>(i + take));
      }
      i += take;
      offset_ += take;
      body_needed_ -= take;
      if (body_needed_ == 0) on_body_complete(out);
      continue;
    }

    // Header or Resync: assemble words one at a time.
    const std::size_t target = (state_ == State::Header && pending_.size() >= kWordBytes)
                                   ? kHeaderWords * kWordBytes
                                   : (pending_.size() / kWordBytes + 1) * kWordBytes;
    const std::size_t take = std::min(n - i, target - pending_.size());
    pending_.insert(pending_.end(), bytes.begin() + static_cast<std::ptrdiff_t>(i),
                    bytes.begin() + static_cast<std::ptrdiff_t>(i + take));
    i += take;
    offset_ += take;
    if (pending_.size() != target) continue;

    if (pending_.size() == kWordBytes) {
      const std::uint64_t w0 = get_be64(pending_.data());
      const std::uint64_t word_offset = offset_ - kWordBytes;
      if (static_cast<std::uint32_t>(w0 >> 32) != kMagic) {
        if (state_ == State::Header) {
          out.errors.push_back({ErrorKind::DataOutsideFrame, word_offset, std::nullopt, std::nullopt});
          state_ = State::Resync;
        }
        pending_.clear();
        continue;
      }
      if (!length_ok(static_cast<std::uint32_t>(w0), max_payload_)) {
        out.errors.push_back({ErrorKind::BadLength, word_offset, std::nullopt, std::nullopt});
        state_ = State::Resync;
        pending_.clear();
        continue;
      }
      frame_start_ = word_offset;
      state_ = State::Header;
      continue;
    }
    on_header();
  }
}

DecodeResult WireDecoder::feed(std::span<const std::uint8_t> bytes) {
  DecodeResult out;
  feed(bytes, out);
  return out;
}

void WireDecoder::finish(DecodeResult& out) {
  if (state_ == State::Body || (state_ == State::Header && !pending_.empty())) {
    std::optional<std::uint16_t> board;
    std::optional<std::uint32_t> frame;
    if (state_ == State::Body) {
      board = current_.board_id;
      frame = current_.frame_id;
    }
    out.errors.push_back({ErrorKind::Truncated, frame_start_, board, frame});
  }
  state_ = State::Header;
  pending_.clear();
  trailer_.clear();
  current_ = Frame{};
}

}  // namespace readout::framing
