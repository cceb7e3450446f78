#pragma once

#include <filesystem>
#include <span>

#include "dynarace/bytes.hpp"
#include "dynarace/plant.hpp"

namespace dynarace {

// Binary trajectory log ("WTRJ", version 1), little-endian:
//   char[4] "WTRJ" | u32 version | u64 traj_id | u32 n_steps | u16 state_dim | u16 action_dim
//   n_steps x { f32 est_state[9] | f32 action[2] | f32 reward | u8 flags }
// flags: bit0 terminated, bit1 truncated.
inline constexpr std::uint32_t kTrajLogVersion = 1;
inline constexpr std::size_t kTrajHeaderSize = 4 + 4 + 8 + 4 + 2 + 2;
inline constexpr std::size_t kTrajRecordSize = 4 * (kStateDim + kActionDim + 1) + 1;

// traj_id bit 63 marks warm-start (assist-driven) trajectories.
inline constexpr std::uint64_t kWarmStartBit = 1ULL << 63;
inline bool is_warm_start(std::uint64_t traj_id) { return (traj_id & kWarmStartBit) != 0; }

Bytes encode_trajectory(const Trajectory& traj);
Trajectory decode_trajectory(std::span<const std::uint8_t> bytes);
// Decodes one log from the front of `bytes`, returning the bytes consumed.
std::size_t decode_trajectory_prefix(std::span<const std::uint8_t> bytes, Trajectory& out);

// In-memory values after an f32 round trip, i.e. what a decoder will see.
Trajectory quantize_trajectory(const Trajectory& traj);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
Bytes read_file(const std::filesystem::path& path);

}  // namespace dynarace
