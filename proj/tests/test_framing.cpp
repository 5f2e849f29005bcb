#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "readout/crc32.hpp"
#include "readout/framing.hpp"

using namespace readout;
using namespace readout::framing;

namespace {

Frame random_frame(std::mt19937_64& rng, std::size_t max_words = 64) {
  const std::size_t words = 1 + rng() % max_words;
  return make_frame(static_cast<std::uint16_t>(rng()), static_cast<std::uint32_t>(rng()),
                    static_cast<std::uint32_t>(rng()), oracle::random_payload(rng, words));
}

std::vector<WordEvent> with_idle(std::mt19937_64& rng, const std::vector<Frame>& frames) {
  std::vector<WordEvent> ev;
  for (const auto& f : frames) {
    for (int k = static_cast<int>(rng() % 3); k > 0; --k) ev.push_back({rng(), false, false, false});
    auto e = encode_frame(f);
    ev.insert(ev.end(), e.begin(), e.end());
  }
  return ev;
}

}  // namespace

TEST_SUITE("framing") {
  TEST_CASE("crc32 matches the bitwise oracle") {
    const std::string check = "123456789";
    std::vector<std::uint8_t> b(check.begin(), check.end());
    CHECK(crc32(b) == 0xCBF43926u);
    CHECK(oracle::crc32(b) == 0xCBF43926u);

    std::mt19937_64 rng(11);
    for (int i = 0; i < 200; ++i) {
      auto p = oracle::random_payload(rng, rng() % 40);
      p.resize(p.size() + rng() % 8);
      CHECK(crc32(p) == oracle::crc32(p));
      const std::size_t cut = p.empty() ? 0 : rng() % p.size();
      const auto first = crc32(std::span(p.data(), cut));
      CHECK(crc32(std::span(p.data() + cut, p.size() - cut), first) == oracle::crc32(p));
    }
  }

  TEST_CASE("serialized bytes match the field-by-field oracle") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 500; ++i) {
      const Frame f = random_frame(rng);
      CHECK(serialize_frame(f) == oracle::frame_bytes(f.board_id, f.frame_id, f.trigger_id, f.payload));
    }
  }

  TEST_CASE("1 KiB payload frame is 1056 bytes with sop on the first word and eop on the last") {
    const Frame f = make_frame(1, 0, 0, std::vector<std::uint8_t>(1024, 0xAB));
    CHECK(serialized_size(f) == 1056);
    const auto ev = encode_frame(f);
    REQUIRE(ev.size() == 132);
    CHECK(ev.front().sop);
    CHECK(ev.back().eop);
    CHECK((ev.front().data >> 32) == kMagic);
    CHECK((ev.front().data & 0xFFFFFFFFu) == 1024);
    CHECK((ev.back().data >> 32) == 0);
    for (std::size_t i = 0; i < ev.size(); ++i) {
      CHECK(ev[i].valid);
      CHECK(ev[i].sop == (i == 0));
      CHECK(ev[i].eop == (i + 1 == ev.size()));
    }
  }

  TEST_CASE("make_frame rejects payloads that are empty or not whole words") {
    CHECK_THROWS_AS(make_frame(0, 0, 0, {}), InvalidFrame);
    CHECK_THROWS_AS(make_frame(0, 0, 0, std::vector<std::uint8_t>(12)), InvalidFrame);
    Frame f = make_frame(0, 0, 0, std::vector<std::uint8_t>(8));
    f.checksum ^= 1;
    CHECK_THROWS_AS(validate(f), InvalidFrame);
    CHECK_THROWS_AS(encode_frame(f), InvalidFrame);
  }

  TEST_CASE("round trip over 10^4 random frames, both decoders") {
    std::mt19937_64 rng(12345);
    for (int i = 0; i < 10000; ++i) {
      const Frame f = random_frame(rng, 32);
      const auto words = decode_stream(encode_frame(f));
      REQUIRE(words.errors.empty());
      REQUIRE(words.frames.size() == 1);
      CHECK(words.frames[0] == f);

      WireDecoder wire;
      auto r = wire.feed(serialize_frame(f));
      wire.finish(r);
      REQUIRE(r.errors.empty());
      REQUIRE(r.frames.size() == 1);
      CHECK(r.frames[0] == f);
    }
  }

  TEST_CASE("chunking invariance") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<Frame> frames;
      for (int k = 1 + static_cast<int>(rng() % 6); k > 0; --k) frames.push_back(random_frame(rng, 20));
      const auto events = with_idle(rng, frames);
      std::vector<std::uint8_t> bytes;
      for (const auto& f : frames) serialize_frame(f, bytes);

      StreamDecoder sd;
      DecodeResult chunked;
      for (std::size_t pos = 0; pos < events.size();) {
        const std::size_t n = std::min<std::size_t>(1 + rng() % 7, events.size() - pos);
        sd.feed(std::span(events.data() + pos, n), chunked);
        pos += n;
      }
      sd.finish(chunked);
      CHECK(chunked.errors.empty());
      CHECK(chunked.frames == frames);

      WireDecoder wd;
      DecodeResult wchunked;
      for (std::size_t pos = 0; pos < bytes.size();) {
        const std::size_t n = std::min<std::size_t>(1 + rng() % 50, bytes.size() - pos);
        wd.feed(std::span(bytes.data() + pos, n), wchunked);
        pos += n;
      }
      wd.finish(wchunked);
      CHECK(wchunked.errors.empty());
      CHECK(wchunked.frames == frames);
      CHECK(wd.bytes_consumed() == bytes.size());
    }
  }

  TEST_CASE("encode never emits an invalid word between sop and eop") {
    std::mt19937_64 rng(5);
    for (int i = 0; i < 100; ++i) {
      for (const auto& e : encode_frame(random_frame(rng))) CHECK(e.valid);
    }
  }

  TEST_CASE("every single-bit corruption is detected") {
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 4; ++trial) {
      const Frame f = random_frame(rng, 16);
      const auto clean = serialize_frame(f);
      for (std::size_t bit = 0; bit < clean.size() * 8; ++bit) {
        auto bad = clean;
        bad[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
        WireDecoder wd;
        auto r = wd.feed(bad);
        wd.finish(r);
        CHECK_MESSAGE(!r.errors.empty(), "bit " << bit);
        for (const auto& g : r.frames) CHECK(g == f);  // never a wrong frame
      }
    }
  }

  TEST_CASE("word decoder error kinds") {
    const Frame f = make_frame(2, 5, 6, std::vector<std::uint8_t>(16, 1));
    const auto ev = encode_frame(f);

    SUBCASE("eop without sop") {
      auto r = decode_stream(std::vector<WordEvent>{ev.back()});
      REQUIRE(r.errors.size() == 1);
      CHECK(r.errors[0].kind == ErrorKind::EopBeforeSop);
    }
    SUBCASE("sop while a frame is open, then the second frame decodes") {
      std::vector<WordEvent> s(ev.begin(), ev.begin() + 2);
      s.insert(s.end(), ev.begin(), ev.end());
      auto r = decode_stream(s);
      REQUIRE(r.errors.size() == 1);
      CHECK(r.errors[0].kind == ErrorKind::SopWhileOpen);
      REQUIRE(r.frames.size() == 1);
      CHECK(r.frames[0] == f);
    }
    SUBCASE("checksum mismatch") {
      auto s = ev;
      s[3].data ^= 1;
      auto r = decode_stream(s);
      REQUIRE(r.errors.size() == 1);
      CHECK(r.errors[0].kind == ErrorKind::ChecksumMismatch);
      CHECK(r.frames.empty());
    }
    SUBCASE("eop earlier than the length field says") {
      std::vector<WordEvent> s(ev.begin(), ev.end());
      s.erase(s.begin() + 3);
      auto r = decode_stream(s);
      REQUIRE(r.errors.size() == 1);
      CHECK(r.errors[0].kind == ErrorKind::LengthMismatch);
    }
    SUBCASE("gap inside a frame") {
      auto s = ev;
      s.insert(s.begin() + 2, WordEvent{0, false, false, false});
      auto r = decode_stream(s);
      REQUIRE(r.errors.size() == 1);
      CHECK(r.errors[0].kind == ErrorKind::GapInFrame);
    }
    SUBCASE("truncated at end of stream") {
      std::vector<WordEvent> s(ev.begin(), ev.end() - 1);
      auto r = decode_stream(s);
      REQUIRE(r.errors.size() == 1);
      CHECK(r.errors[0].kind == ErrorKind::Truncated);
    }
  }

  TEST_CASE("wire decoder resyncs on the next magic after garbage") {
    const Frame a = make_frame(1, 1, 1, std::vector<std::uint8_t>(64, 3));
    const Frame b = make_frame(1, 2, 2, std::vector<std::uint8_t>(64, 4));
    std::vector<std::uint8_t> bytes(24, 0x55);
    serialize_frame(a, bytes);
    auto corrupt = serialize_frame(b);
    corrupt[40] ^= 0xFF;
    bytes.insert(bytes.end(), corrupt.begin(), corrupt.end());
    serialize_frame(b, bytes);

    WireDecoder wd;
    auto r = wd.feed(bytes);
    wd.finish(r);
    REQUIRE(r.frames.size() == 2);
    CHECK(r.frames[0] == a);
    CHECK(r.frames[1] == b);
    REQUIRE(r.errors.size() >= 2);
    CHECK(r.errors[0].kind == ErrorKind::DataOutsideFrame);
    CHECK(r.errors[0].offset == 0);
  }

  TEST_CASE("wire decoder matches the word decoder on corrupted streams") {
    std::mt19937_64 rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
      std::vector<Frame> frames;
      for (int k = 1 + static_cast<int>(rng() % 5); k > 0; --k) frames.push_back(random_frame(rng, 12));
      std::vector<std::uint8_t> bytes;
      for (const auto& f : frames) serialize_frame(f, bytes);
      bytes[rng() % bytes.size()] ^= static_cast<std::uint8_t>(1 + rng() % 255);

      std::vector<WordEvent> ev;
      for (std::size_t i = 0; i < bytes.size(); i += 8) ev.push_back({oracle::get_be(&bytes[i], 8), false, false, true});
      // Word framing reconstructed from the original frame boundaries.
      std::size_t pos = 0;
      for (const auto& f : frames) {
        const auto words = serialized_size(f) / 8;
        ev[pos].sop = true;
        ev[pos + words - 1].eop = true;
        pos += words;
      }
      const auto by_word = decode_stream(ev);
      WireDecoder wd;
      auto by_wire = wd.feed(bytes);
      wd.finish(by_wire);
      // Both drop the damaged frame and keep every intact one.
      for (const auto& f : by_word.frames) CHECK(std::find(frames.begin(), frames.end(), f) != frames.end());
      for (const auto& f : by_wire.frames) CHECK(std::find(frames.begin(), frames.end(), f) != frames.end());
      CHECK(by_word.frames.size() == frames.size() - 1);
      CHECK(by_wire.frames.size() <= frames.size() - 1);
      CHECK_FALSE(by_word.errors.empty());
      CHECK_FALSE(by_wire.errors.empty());
    }
  }

  TEST_CASE("empty input yields nothing") {
    WireDecoder wd;
    auto r = wd.feed(std::span<const std::uint8_t>{});
    wd.finish(r);
    CHECK(r.frames.empty());
    CHECK(r.errors.empty());
    CHECK(decode_stream({}).frames.empty());
  }
}
