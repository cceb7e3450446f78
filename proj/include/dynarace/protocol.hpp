#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dynarace/bytes.hpp"
#include "dynarace/plant.hpp"

namespace dynarace {

// Frame: "WBL1" | u8 type | u32 payload_len | payload | u32 crc32(payload),
// little-endian.
inline constexpr std::uint8_t kFrameMagic[4] = {'W', 'B', 'L', '1'};
inline constexpr std::size_t kFrameHeaderSize = 9;
inline constexpr std::size_t kFrameOverhead = kFrameHeaderSize + 4;
inline constexpr std::uint16_t kProtoVersion = 1;
// Frames above this size are rejected before allocation.
inline constexpr std::uint32_t kMaxPayload = 512u << 20;

enum class MsgType : std::uint8_t {
  kHello = 0x01,
  kTrajUpload = 0x02,
  kTrajAck = 0x03,
  kDatasetSnapshot = 0x04,
  kPolicyCheckpoint = 0x05,
  kCkptAck = 0x06,
  kMetrics = 0x07,
};

bool is_known_type(std::uint8_t type);

enum class Role : std::uint8_t { kCollector = 1, kTrainer = 2 };

struct Frame {
  MsgType type = MsgType::kHello;
  Bytes payload;
  friend bool operator==(const Frame&, const Frame&) = default;
};

std::uint32_t crc32_of(std::span<const std::uint8_t> data);

Bytes encode_frame(MsgType type, std::span<const std::uint8_t> payload);
// Decodes exactly one frame occupying all of `bytes`.
Frame decode_frame(std::span<const std::uint8_t> bytes);

// Incremental decoder for a byte stream. next() yields a frame as soon as
// one is complete and throws on the first malformed one.
class FrameReader {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<Frame> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  Bytes buf_;
  std::size_t pos_ = 0;
};

struct Hello {
  Role role = Role::kCollector;
  std::uint16_t proto_version = kProtoVersion;
  friend bool operator==(const Hello&, const Hello&) = default;
};
struct TrajAck {
  std::uint64_t traj_id = 0;
  bool accepted = false;
  friend bool operator==(const TrajAck&, const TrajAck&) = default;
};
struct DatasetSnapshot {
  std::uint64_t snapshot_id = 0;
  std::vector<Bytes> trajectories;  // trajectory log bytes
  friend bool operator==(const DatasetSnapshot&, const DatasetSnapshot&) = default;
};
struct CkptAck {
  std::uint64_t checkpoint_id = 0;
  friend bool operator==(const CkptAck&, const CkptAck&) = default;
};

Bytes encode_hello(const Hello& h);
Hello decode_hello(std::span<const std::uint8_t> p);
Bytes encode_traj_ack(const TrajAck& a);
TrajAck decode_traj_ack(std::span<const std::uint8_t> p);
// Trajectory logs are self-delimiting, so they are concatenated verbatim.
Bytes encode_snapshot(const DatasetSnapshot& s);
DatasetSnapshot decode_snapshot(std::span<const std::uint8_t> p);
Bytes encode_ckpt_ack(const CkptAck& a);
CkptAck decode_ckpt_ack(std::span<const std::uint8_t> p);
Bytes encode_metrics(const std::string& text);
std::string decode_metrics(std::span<const std::uint8_t> p);

// Validates every payload type against its layout; throws MalformedPayload.
void validate_payload(const Frame& f);

}  // namespace dynarace
