#include "dynarace/protocol.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>

#include "dynarace/trajectory_log.hpp"

namespace dynarace {
namespace {

void check_header(std::span<const std::uint8_t> h, std::uint8_t& type, std::uint32_t& len) {
  if (std::memcmp(h.data(), kFrameMagic, 4) != 0) throw Error(ErrorCode::kBadMagic, "frame magic is not WBL1");
  type = h[4];
  if (!is_known_type(type)) {
    throw Error(ErrorCode::kUnknownType, "unknown frame type " + std::to_string(type));
  }
  std::memcpy(&len, h.data() + 5, 4);
  if (len > kMaxPayload) throw Error(ErrorCode::kLengthMismatch, "frame payload exceeds limit");
}

Frame finish(std::uint8_t type, std::span<const std::uint8_t> payload, std::span<const std::uint8_t> crc_bytes) {
  std::uint32_t crc;
  std::memcpy(&crc, crc_bytes.data(), 4);
  if (crc != crc32_of(payload)) throw Error(ErrorCode::kCrcMismatch, "frame checksum mismatch");
  return Frame{static_cast<MsgType>(type), Bytes(payload.begin(), payload.end())};
}

}  // namespace

bool is_known_type(std::uint8_t type) { return type >= 0x01 && type <= 0x07; }

std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  // zlib takes uInt lengths.
  while (off < data.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(data.size() - off, 1u << 30));
    crc = crc32(crc, data.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(crc);
}

Bytes encode_frame(MsgType type, std::span<const std::uint8_t> payload) {
  if (payload.size() > kMaxPayload) throw Error(ErrorCode::kLengthMismatch, "payload too large to frame");
  Bytes out;
  out.reserve(payload.size() + kFrameOverhead);
  ByteWriter w(out);
  w.raw(std::span<const std::uint8_t>(kFrameMagic, 4));
  w.put(static_cast<std::uint8_t>(type));
  w.put(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  w.put(crc32_of(payload));
  return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw Error(ErrorCode::kLengthMismatch, "frame shorter than its magic");
  if (std::memcmp(bytes.data(), kFrameMagic, 4) != 0) throw Error(ErrorCode::kBadMagic, "frame magic is not WBL1");
  if (bytes.size() < kFrameOverhead) throw Error(ErrorCode::kLengthMismatch, "frame shorter than its header");
  std::uint8_t type;
  std::uint32_t len;
  check_header(bytes.first(kFrameHeaderSize), type, len);
  if (bytes.size() != kFrameOverhead + len) {
    throw Error(ErrorCode::kLengthMismatch, "frame length field disagrees with byte count");
  }
  return finish(type, bytes.subspan(kFrameHeaderSize, len), bytes.subspan(kFrameHeaderSize + len, 4));
}

void FrameReader::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  } else if (pos_ > (1u << 20) && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Frame> FrameReader::next() {
  const std::span<const std::uint8_t> avail(buf_.data() + pos_, buf_.size() - pos_);
  if (avail.size() >= 4 && std::memcmp(avail.data(), kFrameMagic, 4) != 0) {
    throw Error(ErrorCode::kBadMagic, "frame magic is not WBL1");
  }
  if (avail.size() < kFrameHeaderSize) return std::nullopt;
  std::uint8_t type;
  std::uint32_t len;
  check_header(avail.first(kFrameHeaderSize), type, len);
  if (avail.size() < kFrameOverhead + len) return std::nullopt;
  Frame f = finish(type, avail.subspan(kFrameHeaderSize, len), avail.subspan(kFrameHeaderSize + len, 4));
  pos_ += kFrameOverhead + len;
  return f;
}

Bytes encode_hello(const Hello& h) {
  Bytes out;
  ByteWriter w(out);
  w.put(static_cast<std::uint8_t>(h.role));
  w.put(h.proto_version);
  return out;
}

Hello decode_hello(std::span<const std::uint8_t> p) {
  ByteReader r(p, ErrorCode::kMalformedPayload);
  Hello h;
  const auto role = r.get<std::uint8_t>();
  if (role != 1 && role != 2) throw Error(ErrorCode::kMalformedPayload, "HELLO role must be 1 or 2");
  h.role = static_cast<Role>(role);
  h.proto_version = r.get<std::uint16_t>();
  r.expect_end("HELLO");
  return h;
}

Bytes encode_traj_ack(const TrajAck& a) {
  Bytes out;
  ByteWriter w(out);
  w.put(a.traj_id);
  w.put(static_cast<std::uint8_t>(a.accepted ? 1 : 0));
  return out;
}

TrajAck decode_traj_ack(std::span<const std::uint8_t> p) {
  ByteReader r(p, ErrorCode::kMalformedPayload);
  TrajAck a;
  a.traj_id = r.get<std::uint64_t>();
  const auto acc = r.get<std::uint8_t>();
  if (acc > 1) throw Error(ErrorCode::kMalformedPayload, "TRAJ_ACK accepted must be 0 or 1");
  a.accepted = acc == 1;
  r.expect_end("TRAJ_ACK");
  return a;
}

namespace {

// Byte length of the trajectory log at the front of `p`, from its header.
std::size_t log_length(std::span<const std::uint8_t> p) {
  if (p.size() < kTrajHeaderSize) throw Error(ErrorCode::kMalformedPayload, "truncated trajectory log header");
  std::uint32_t n;
  std::memcpy(&n, p.data() + 16, 4);
  return kTrajHeaderSize + static_cast<std::size_t>(n) * kTrajRecordSize;
}

}  // namespace

Bytes encode_snapshot(const DatasetSnapshot& s) {
  Bytes out;
  ByteWriter w(out);
  w.put(s.snapshot_id);
  w.put(static_cast<std::uint32_t>(s.trajectories.size()));
  for (const auto& t : s.trajectories) w.raw(t);
  return out;
}

DatasetSnapshot decode_snapshot(std::span<const std::uint8_t> p) {
  ByteReader r(p, ErrorCode::kMalformedPayload);
  DatasetSnapshot s;
  s.snapshot_id = r.get<std::uint64_t>();
  const std::uint32_t n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto rest = p.subspan(r.position());
    const std::size_t len = log_length(rest);
    const auto body = r.raw(len);
    try {
      decode_trajectory(body);
    } catch (const Error& e) {
      throw Error(ErrorCode::kMalformedPayload, std::string("snapshot entry: ") + e.what());
    }
    s.trajectories.emplace_back(body.begin(), body.end());
  }
  r.expect_end("DATASET_SNAPSHOT");
  return s;
}

Bytes encode_ckpt_ack(const CkptAck& a) {
  Bytes out;
  ByteWriter w(out);
  w.put(a.checkpoint_id);
  return out;
}

CkptAck decode_ckpt_ack(std::span<const std::uint8_t> p) {
  ByteReader r(p, ErrorCode::kMalformedPayload);
  CkptAck a;
  a.checkpoint_id = r.get<std::uint64_t>();
  r.expect_end("CKPT_ACK");
  return a;
}

Bytes encode_metrics(const std::string& text) { return Bytes(text.begin(), text.end()); }

std::string decode_metrics(std::span<const std::uint8_t> p) {
  // Structural UTF-8 check: lead byte announces 0-3 continuation bytes.
  for (std::size_t i = 0; i < p.size();) {
    const std::uint8_t c = p[i];
    const int extra = c < 0x80 ? 0 : (c >> 5) == 0x6 ? 1 : (c >> 4) == 0xE ? 2 : (c >> 3) == 0x1E ? 3 : -1;
    if (extra < 0 || i + static_cast<std::size_t>(extra) >= p.size() + (extra == 0)) {
      throw Error(ErrorCode::kMalformedPayload, "METRICS is not valid UTF-8");
    }
    for (int k = 1; k <= extra; ++k) {
      if ((p[i + static_cast<std::size_t>(k)] & 0xC0) != 0x80) {
        throw Error(ErrorCode::kMalformedPayload, "METRICS is not valid UTF-8");
      }
    }
    i += static_cast<std::size_t>(extra) + 1;
  }
  return std::string(p.begin(), p.end());
}

void validate_payload(const Frame& f) {
  switch (f.type) {
    case MsgType::kHello: decode_hello(f.payload); break;
    case MsgType::kTrajUpload:
      try {
        decode_trajectory(f.payload);
      } catch (const Error& e) {
        throw Error(ErrorCode::kMalformedPayload, std::string("TRAJ_UPLOAD: ") + e.what());
      }
      break;
    case MsgType::kTrajAck: decode_traj_ack(f.payload); break;
    case MsgType::kDatasetSnapshot: decode_snapshot(f.payload); break;
    case MsgType::kPolicyCheckpoint:
      if (f.payload.size() < 16 || std::memcmp(f.payload.data(), "WPOL", 4) != 0) {
        throw Error(ErrorCode::kMalformedPayload, "POLICY_CHECKPOINT is not a WPOL blob");
      }
      break;
    case MsgType::kCkptAck: decode_ckpt_ack(f.payload); break;
    case MsgType::kMetrics: decode_metrics(f.payload); break;
  }
}

}  // namespace dynarace
