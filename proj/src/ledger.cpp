#include "dynarace/ledger.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

#include "dynarace/error.hpp"
#include "dynarace/trajectory_log.hpp"

namespace dynarace {
namespace fs = std::filesystem;

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kStorageFailure, "cannot open " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw Error(ErrorCode::kStorageFailure, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kStorageFailure, "rename " + tmp.string() + ": " + ec.message());
}

LedgerState RunLedger::replay(const fs::path& ledger_file) {
  LedgerState st;
  std::ifstream in(ledger_file, std::ios::binary);
  if (!in) return st;
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  std::size_t start = 0;
  while (true) {
    const auto nl = text.find('\n', start);
    if (nl == std::string::npos) break;  // torn tail
    std::istringstream line(text.substr(start, nl - start));
    start = nl + 1;
    char kind = 0;
    line >> kind;
    if (kind == 'T') {
      LedgerEntry e;
      line >> e.traj_id >> e.offset >> e.length >> e.wallclock >> e.sim_seconds;
      if (!line || st.ids.count(e.traj_id)) throw Error(ErrorCode::kStorageFailure, "corrupt ledger record");
      st.ids.insert(e.traj_id);
      st.cumulative_sim += e.sim_seconds;
      st.entries.push_back(e);
    } else if (kind == 'S') {
      SnapshotRecord s;
      line >> s.snapshot_id >> s.n_traj;
      if (!line) throw Error(ErrorCode::kStorageFailure, "corrupt ledger record");
      st.snapshots.push_back(s);
    } else if (kind == 'C') {
      std::uint64_t id = 0;
      line >> id;
      if (!line) throw Error(ErrorCode::kStorageFailure, "corrupt ledger record");
      st.deployed_checkpoint = std::max(st.deployed_checkpoint, id);
    } else {
      throw Error(ErrorCode::kStorageFailure, "unknown ledger record kind");
    }
  }
  return st;
}

RunLedger::RunLedger(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  for (const char* sub : {"traj", "snapshots", "ckpt"}) {
    fs::create_directories(dir_ / sub, ec);
    if (ec) throw Error(ErrorCode::kStorageFailure, "cannot create " + (dir_ / sub).string());
  }
  const fs::path file = dir_ / "ledger.log";
  state_ = replay(file);
  // Drop a torn tail so new records start on a fresh line.
  if (fs::exists(file)) {
    std::ifstream in(file, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    const auto last = text.rfind('\n');
    const std::size_t keep = last == std::string::npos ? 0 : last + 1;
    if (keep != text.size()) fs::resize_file(file, keep);
  }
  log_.open(file, std::ios::binary | std::ios::app);
  if (!log_) throw Error(ErrorCode::kStorageFailure, "cannot open " + file.string());
}

void RunLedger::append(const std::string& line) {
  log_ << line << '\n';
  log_.flush();
  if (!log_) throw Error(ErrorCode::kStorageFailure, "cannot append to ledger.log");
}

fs::path RunLedger::traj_path(std::uint64_t id) const { return dir_ / "traj" / (std::to_string(id) + ".wtrj"); }
fs::path RunLedger::snapshot_path(std::uint64_t id) const { return dir_ / "snapshots" / (std::to_string(id) + ".bin"); }
fs::path RunLedger::checkpoint_path(std::uint64_t id) const { return dir_ / "ckpt" / (std::to_string(id) + ".wpol"); }

bool RunLedger::ingest(std::uint64_t traj_id, std::span<const std::uint8_t> log_bytes, double sim_seconds) {
  if (state_.has(traj_id)) return false;
  write_file_atomic(traj_path(traj_id), log_bytes);
  LedgerEntry e;
  e.traj_id = traj_id;
  e.offset = state_.next_offset();
  e.length = log_bytes.size();
  e.wallclock = std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
  e.sim_seconds = sim_seconds;
  char buf[160];
  std::snprintf(buf, sizeof buf, "T %llu %llu %llu %.6f %.17g", static_cast<unsigned long long>(e.traj_id),
                static_cast<unsigned long long>(e.offset), static_cast<unsigned long long>(e.length),
                e.wallclock, e.sim_seconds);
  append(buf);
  // Round-trip through the text form so memory matches a replay exactly.
  std::istringstream back(buf + 2);
  back >> e.traj_id >> e.offset >> e.length >> e.wallclock >> e.sim_seconds;
  state_.ids.insert(traj_id);
  state_.cumulative_sim += e.sim_seconds;
  state_.entries.push_back(e);
  return true;
}

Bytes RunLedger::seal_snapshot(std::uint64_t snapshot_id, std::span<const std::uint8_t> payload,
                               std::uint64_t n_traj) {
  const fs::path p = snapshot_path(snapshot_id);
  if (fs::exists(p)) throw Error(ErrorCode::kStorageFailure, "snapshot " + p.string() + " already sealed");
  write_file_atomic(p, payload);
  append("S " + std::to_string(snapshot_id) + " " + std::to_string(n_traj));
  state_.snapshots.push_back({snapshot_id, n_traj});
  return Bytes(payload.begin(), payload.end());
}

void RunLedger::store_checkpoint(std::uint64_t checkpoint_id, std::span<const std::uint8_t> bytes) {
  write_file_atomic(checkpoint_path(checkpoint_id), bytes);
}

bool RunLedger::record_deployment(std::uint64_t checkpoint_id) {
  if (checkpoint_id <= state_.deployed_checkpoint) return false;
  append("C " + std::to_string(checkpoint_id));
  state_.deployed_checkpoint = checkpoint_id;
  return true;
}

Bytes RunLedger::trajectory_bytes(std::uint64_t traj_id) const { return read_file(traj_path(traj_id)); }

}  // namespace dynarace
