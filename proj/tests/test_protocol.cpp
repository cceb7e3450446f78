#include <doctest.h>

#include <cstring>

#include "dynarace/protocol.hpp"
#include "dynarace/rng.hpp"
#include "dynarace/trajectory_log.hpp"

using namespace dynarace;

namespace {

// Bitwise reflected CRC-32 (polynomial 0xEDB88320).
std::uint32_t reference_crc(std::span<const std::uint8_t> data) {
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::uint8_t byte : data) {
    crc ^= byte;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  return ~crc;
}

Bytes random_bytes(std::size_t n, Rng& rng) {
  Bytes b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng.next_u64());
  return b;
}

template <typename F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::kBadFormat;
}

Trajectory small_trajectory(std::uint64_t id, int steps, Rng& rng) {
  Trajectory t;
  t.id = id;
  for (int k = 0; k < steps; ++k) {
    TrajectoryStep s;
    for (int i = 0; i < kStateDim; ++i) s.est_state[i] = rng.normal();
    s.action = {rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2)};
    s.reward = rng.normal();
    t.steps.push_back(s);
  }
  if (!t.steps.empty()) t.steps.back().terminated = true;
  return t;
}

// One valid frame of every message type.
std::vector<Frame> sample_frames(Rng& rng) {
  std::vector<Frame> out;
  out.push_back({MsgType::kHello, encode_hello({Role::kTrainer, kProtoVersion})});
  out.push_back({MsgType::kTrajUpload, encode_trajectory(small_trajectory(5, 3, rng))});
  out.push_back({MsgType::kTrajAck, encode_traj_ack({5, true})});
  DatasetSnapshot snap{9, {encode_trajectory(small_trajectory(1, 2, rng)), encode_trajectory(small_trajectory(2, 0, rng))}};
  out.push_back({MsgType::kDatasetSnapshot, encode_snapshot(snap)});
  Bytes ckpt(24, 0);
  std::memcpy(ckpt.data(), "WPOL", 4);
  out.push_back({MsgType::kPolicyCheckpoint, ckpt});
  out.push_back({MsgType::kCkptAck, encode_ckpt_ack({3})});
  out.push_back({MsgType::kMetrics, encode_metrics("round=1\nmodel_nll=-2.5\n")});
  return out;
}

}  // namespace

TEST_CASE("checksum agrees with a bitwise reference") {
  Rng rng(1);
  const Bytes check = {'1', '2', '3', '4', '5', '6', '7', '8', '9'};
  CHECK(crc32_of(check) == 0xCBF43926u);
  for (int k = 0; k < 200; ++k) {
    const Bytes b = random_bytes(rng.index(3000), rng);
    CHECK(crc32_of(b) == reference_crc(b));
  }
}

TEST_CASE("HELLO frame bytes are forced by the layout") {
  const Bytes f = encode_frame(MsgType::kHello, encode_hello({Role::kCollector, 1}));
  const Bytes head = {0x57, 0x42, 0x4C, 0x31, 0x01, 0x03, 0x00, 0x00, 0x00, 0x01, 0x01, 0x00};
  REQUIRE(f.size() == head.size() + 4);
  CHECK(Bytes(f.begin(), f.begin() + 12) == head);
  const std::uint32_t crc = reference_crc(Bytes{0x01, 0x01, 0x00});
  const Bytes tail = {static_cast<std::uint8_t>(crc), static_cast<std::uint8_t>(crc >> 8),
                      static_cast<std::uint8_t>(crc >> 16), static_cast<std::uint8_t>(crc >> 24)};
  CHECK(Bytes(f.begin() + 12, f.end()) == tail);
  CHECK(decode_hello(decode_frame(f).payload) == Hello{Role::kCollector, 1});
}

TEST_CASE("one mebibyte payload round trip") {
  Rng rng(2);
  const Bytes payload = random_bytes(1u << 20, rng);
  const Bytes f = encode_frame(MsgType::kTrajUpload, payload);
  CHECK(f.size() == payload.size() + kFrameOverhead);
  const Frame back = decode_frame(f);
  CHECK(back.type == MsgType::kTrajUpload);
  CHECK(back.payload == payload);
}

TEST_CASE("any flipped payload bit fails the checksum") {
  Rng rng(3);
  const Bytes payload = random_bytes(64, rng);
  const Bytes f = encode_frame(MsgType::kMetrics, payload);
  for (std::size_t bit = 0; bit < payload.size() * 8; ++bit) {
    Bytes g = f;
    g[kFrameHeaderSize + bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    CHECK(code_of([&] { decode_frame(g); }) == ErrorCode::kCrcMismatch);
  }
}

TEST_CASE("header errors") {
  const Bytes f = encode_frame(MsgType::kCkptAck, encode_ckpt_ack({7}));
  Bytes bad = f;
  bad[1] = 'X';
  CHECK(code_of([&] { decode_frame(bad); }) == ErrorCode::kBadMagic);
  bad = f;
  bad[4] = 0x08;
  CHECK(code_of([&] { decode_frame(bad); }) == ErrorCode::kUnknownType);
  bad = f;
  bad[4] = 0x00;
  CHECK(code_of([&] { decode_frame(bad); }) == ErrorCode::kUnknownType);
  bad = f;
  bad[5] += 1;
  CHECK(code_of([&] { decode_frame(bad); }) == ErrorCode::kLengthMismatch);
  bad = Bytes(f.begin(), f.end() - 1);
  CHECK(code_of([&] { decode_frame(bad); }) == ErrorCode::kLengthMismatch);
  bad = f;
  bad.push_back(0);
  CHECK(code_of([&] { decode_frame(bad); }) == ErrorCode::kLengthMismatch);
  CHECK(code_of([&] { decode_frame(Bytes{}); }) == ErrorCode::kLengthMismatch);
}

TEST_CASE("payload layouts round trip") {
  Rng rng(4);
  for (const Frame& f : sample_frames(rng)) {
    const Frame back = decode_frame(encode_frame(f.type, f.payload));
    CHECK(back == f);
    CHECK_NOTHROW(validate_payload(back));
  }
  CHECK(decode_traj_ack(encode_traj_ack({1ull << 40, false})) == TrajAck{1ull << 40, false});
  CHECK(decode_ckpt_ack(encode_ckpt_ack({99})) == CkptAck{99});
  const DatasetSnapshot s{4, {encode_trajectory(small_trajectory(8, 5, rng))}};
  CHECK(decode_snapshot(encode_snapshot(s)) == s);
  CHECK(decode_metrics(encode_metrics("eval_laps=2\n")) == "eval_laps=2\n");
}

TEST_CASE("malformed payloads") {
  CHECK(code_of([] { decode_hello(Bytes{3, 1, 0}); }) == ErrorCode::kMalformedPayload);
  CHECK(code_of([] { decode_hello(Bytes{1, 1}); }) == ErrorCode::kMalformedPayload);
  CHECK(code_of([] { decode_traj_ack(Bytes(9, 2)); }) == ErrorCode::kMalformedPayload);
  CHECK(code_of([] { decode_ckpt_ack(Bytes(7, 0)); }) == ErrorCode::kMalformedPayload);
  CHECK(code_of([] { decode_metrics(Bytes{0xFF}); }) == ErrorCode::kMalformedPayload);
  CHECK(code_of([] { decode_metrics(Bytes{0xC3}); }) == ErrorCode::kMalformedPayload);
  CHECK(decode_metrics(Bytes{0xC3, 0xA9}) == "\xC3\xA9");
  Rng rng(5);
  Bytes snap = encode_snapshot({1, {encode_trajectory(small_trajectory(1, 2, rng))}});
  snap.pop_back();
  CHECK(code_of([&] { decode_snapshot(snap); }) == ErrorCode::kMalformedPayload);
  CHECK(code_of([] { validate_payload({MsgType::kPolicyCheckpoint, Bytes(20, 0)}); }) ==
        ErrorCode::kMalformedPayload);
}

TEST_CASE("stream reader reassembles random frames from random chunks") {
  Rng rng(6);
  std::vector<Frame> sent;
  Bytes stream;
  for (int k = 0; k < 100000; ++k) {
    Frame f{static_cast<MsgType>(1 + rng.index(7)), random_bytes(rng.index(40), rng)};
    const Bytes e = encode_frame(f.type, f.payload);
    stream.insert(stream.end(), e.begin(), e.end());
    sent.push_back(std::move(f));
  }
  FrameReader reader;
  std::size_t got = 0, pos = 0;
  bool same = true;
  while (pos < stream.size()) {
    const std::size_t n = std::min(stream.size() - pos, 1 + rng.index(300));
    reader.feed(std::span<const std::uint8_t>(stream.data() + pos, n));
    pos += n;
    while (auto f = reader.next()) same = same && got < sent.size() && *f == sent[got++];
  }
  CHECK(same);
  CHECK(got == sent.size());
  CHECK(reader.buffered() == 0);
}

TEST_CASE("fuzzed streams raise only protocol errors") {
  Rng rng(7);
  Bytes clean;
  for (const Frame& f : sample_frames(rng)) {
    const Bytes e = encode_frame(f.type, f.payload);
    clean.insert(clean.end(), e.begin(), e.end());
  }
  long defined = 0, other = 0, frames = 0;
  for (int trial = 0; trial < 1000000; ++trial) {
    Bytes b = clean;
    const int edits = 1 + static_cast<int>(rng.index(4));
    for (int e = 0; e < edits && !b.empty(); ++e) {
      const std::size_t at = rng.index(b.size());
      switch (rng.index(5)) {
        case 0: b[at] ^= static_cast<std::uint8_t>(1u << rng.index(8)); break;
        case 1: b[at] = static_cast<std::uint8_t>(rng.next_u64()); break;
        case 2: b.insert(b.begin() + static_cast<std::ptrdiff_t>(at), static_cast<std::uint8_t>(rng.next_u64())); break;
        case 3: b.erase(b.begin() + static_cast<std::ptrdiff_t>(at)); break;
        default: b.resize(at); break;
      }
    }
    try {
      FrameReader reader;
      reader.feed(b);
      while (auto f = reader.next()) {
        ++frames;
        validate_payload(*f);
      }
    } catch (const Error&) {
      ++defined;
    } catch (...) {
      ++other;
    }
    if (trial % 16 == 0) {
      try {
        validate_payload(decode_frame(b));
      } catch (const Error&) {
        ++defined;
      } catch (...) {
        ++other;
      }
    }
  }
  CHECK(other == 0);
  CHECK(defined > 0);
  CHECK(frames > 0);
}
