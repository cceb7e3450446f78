#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dynarace/bytes.hpp"

namespace dynarace {

struct LedgerEntry {
  std::uint64_t traj_id = 0;
  std::uint64_t offset = 0;  // byte offset within the concatenated dataset
  std::uint64_t length = 0;
  double wallclock = 0.0;    // host seconds since the epoch at ingest
  double sim_seconds = 0.0;
  friend bool operator==(const LedgerEntry&, const LedgerEntry&) = default;
};

struct SnapshotRecord {
  std::uint64_t snapshot_id = 0;
  std::uint64_t n_traj = 0;
  friend bool operator==(const SnapshotRecord&, const SnapshotRecord&) = default;
};

// In-memory view of ledger.log. Records are text lines:
//   T <traj_id> <offset> <length> <wallclock> <sim_seconds>
//   S <snapshot_id> <n_traj>
//   C <checkpoint_id>
// A trailing line without its newline is a torn write and is discarded.
struct LedgerState {
  std::vector<LedgerEntry> entries;
  std::vector<SnapshotRecord> snapshots;
  std::uint64_t deployed_checkpoint = 0;

  bool has(std::uint64_t traj_id) const { return ids.count(traj_id) > 0; }
  double total_sim_seconds() const { return entries.empty() ? 0.0 : cumulative_sim; }
  std::uint64_t next_offset() const {
    return entries.empty() ? 0 : entries.back().offset + entries.back().length;
  }

  std::set<std::uint64_t> ids;
  double cumulative_sim = 0.0;

  friend bool operator==(const LedgerState& a, const LedgerState& b) {
    return a.entries == b.entries && a.snapshots == b.snapshots &&
           a.deployed_checkpoint == b.deployed_checkpoint;
  }
};

// Owns <dir>/ledger.log, <dir>/traj, <dir>/snapshots, <dir>/ckpt.
class RunLedger {
 public:
  explicit RunLedger(std::filesystem::path dir);

  const LedgerState& state() const { return state_; }
  const std::filesystem::path& dir() const { return dir_; }

  // Persists the log bytes, then appends the ledger record. Returns false
  // (and changes nothing) for a known traj_id. Throws StorageFailure.
  bool ingest(std::uint64_t traj_id, std::span<const std::uint8_t> log_bytes, double sim_seconds);
  // Writes snapshots/<id>.bin once; returns its bytes.
  Bytes seal_snapshot(std::uint64_t snapshot_id, std::span<const std::uint8_t> payload,
                      std::uint64_t n_traj);
  void store_checkpoint(std::uint64_t checkpoint_id, std::span<const std::uint8_t> bytes);
  // Records a deployment; returns false when id does not exceed the current one.
  bool record_deployment(std::uint64_t checkpoint_id);

  Bytes trajectory_bytes(std::uint64_t traj_id) const;
  std::filesystem::path traj_path(std::uint64_t traj_id) const;
  std::filesystem::path snapshot_path(std::uint64_t snapshot_id) const;
  std::filesystem::path checkpoint_path(std::uint64_t checkpoint_id) const;

  static LedgerState replay(const std::filesystem::path& ledger_file);

 private:
  void append(const std::string& line);

  std::filesystem::path dir_;
  LedgerState state_;
  std::ofstream log_;
};

// Writes via a temporary file and rename so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dynarace
