#include "dynarace/trajectory_log.hpp"

#include <fstream>

namespace dynarace {

Bytes encode_trajectory(const Trajectory& traj) {
  Bytes out;
  out.reserve(kTrajHeaderSize + kTrajRecordSize * traj.steps.size());
  ByteWriter w(out);
  w.raw(std::string_view("WTRJ"));
  w.put<std::uint32_t>(kTrajLogVersion);
  w.put<std::uint64_t>(traj.id);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(traj.steps.size()));
  w.put<std::uint16_t>(kStateDim);
  w.put<std::uint16_t>(kActionDim);
  for (const auto& s : traj.steps) {
    for (double x : s.est_state.v) w.put_f32(x);
    w.put_f32(s.action.drive);
    w.put_f32(s.action.reaction);
    w.put_f32(s.reward);
    std::uint8_t flags = 0;
    if (s.terminated) flags |= 1;
    if (s.truncated) flags |= 2;
    w.put(flags);
  }
  return out;
}

std::size_t decode_trajectory_prefix(std::span<const std::uint8_t> bytes, Trajectory& out) {
  ByteReader r(bytes, ErrorCode::kBadFormat);
  const auto magic = r.raw(4);
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != "WTRJ") {
    throw Error(ErrorCode::kBadFormat, "trajectory log magic is not WTRJ");
  }
  if (r.get<std::uint32_t>() != kTrajLogVersion) {
    throw Error(ErrorCode::kBadFormat, "unsupported trajectory log version");
  }
  out.id = r.get<std::uint64_t>();
  const std::uint32_t n = r.get<std::uint32_t>();
  if (r.get<std::uint16_t>() != kStateDim || r.get<std::uint16_t>() != kActionDim) {
    throw Error(ErrorCode::kBadFormat, "trajectory log dimensions do not match 9/2");
  }
  if (r.remaining() / kTrajRecordSize < n) {
    throw Error(ErrorCode::kBadFormat, "trajectory log shorter than its step count");
  }
  out.steps.assign(n, {});
  for (auto& s : out.steps) {
    for (double& x : s.est_state.v) x = r.get<float>();
    s.action.drive = r.get<float>();
    s.action.reaction = r.get<float>();
    s.reward = r.get<float>();
    const auto flags = r.get<std::uint8_t>();
    if (flags & ~std::uint8_t{3}) throw Error(ErrorCode::kBadFormat, "unknown flag bits");
    s.terminated = flags & 1;
    s.truncated = flags & 2;
    if (s.terminated && s.truncated) {
      throw Error(ErrorCode::kBadFormat, "step both terminated and truncated");
    }
  }
  return r.position();
}

Trajectory decode_trajectory(std::span<const std::uint8_t> bytes) {
  Trajectory t;
  const std::size_t used = decode_trajectory_prefix(bytes, t);
  if (used != bytes.size()) throw Error(ErrorCode::kBadFormat, "trailing bytes after trajectory");
  return t;
}

Trajectory quantize_trajectory(const Trajectory& traj) {
  return decode_trajectory(encode_trajectory(traj));
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kStorageFailure, "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::kStorageFailure, "short write to " + path.string());
}

Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kStorageFailure, "cannot open " + path.string());
  Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return b;
}

}  // namespace dynarace
