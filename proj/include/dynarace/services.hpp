#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "dynarace/config.hpp"
#include "dynarace/learner.hpp"
#include "dynarace/ledger.hpp"
#include "dynarace/net.hpp"

namespace dynarace {

class TeleopGateway;

// Cumulative collected seconds at which snapshot `round` (1-based) is due.
double round_target(const RunConfig& cfg, std::uint64_t round);
// Rounds that fit the configured budget (or the explicit round limit).
std::uint64_t planned_rounds(const RunConfig& cfg);

inline constexpr const char* kMetricsHeader =
    "round,wallclock_s,sim_s_collected,model_nll,median_rollout_len,actor_loss,critic_loss,"
    "eval_avg_speed,eval_laps";

// The workstation role: ingest, persist, snapshot, relay.
class Bookkeeper {
 public:
  // Listening ports may be 0 (ephemeral); see collector_port()/trainer_port().
  explicit Bookkeeper(const RunConfig& cfg, bool lockstep = false);
  ~Bookkeeper();

  int collector_port() const { return collector_listener_.port(); }
  int trainer_port() const { return trainer_listener_.port(); }

  void start();  // spawns the accept loops
  void stop();   // closes listeners and connections, joins threads

  LedgerState ledger_state() const;
  std::uint64_t metrics_rows() const;
  // Blocks until `rows` metrics rows exist or the timeout elapses.
  bool wait_metrics(std::uint64_t rows, int timeout_ms) const;

 private:
  struct Peer;
  void accept_loop(Listener& l, Role role);
  void serve(std::shared_ptr<Peer> peer, Role role);
  void on_upload(const std::shared_ptr<Peer>& peer, const Frame& f);
  void on_checkpoint(const Frame& f);
  void on_metrics(const Frame& f);
  // Seals and sends the next snapshot when it is due and the trainer waits.
  void maybe_seal_locked(std::vector<std::function<void()>>& sends);

  RunConfig cfg_;
  bool lockstep_;
  Listener collector_listener_, trainer_listener_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  RunLedger ledger_;
  std::vector<Bytes> logs_;  // trajectory bytes in ledger order
  std::shared_ptr<Peer> collector_, trainer_;
  bool trainer_ready_ = false;
  std::uint64_t metrics_rows_ = 0;
  std::uint64_t latest_checkpoint_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_threads_[2];
  std::vector<std::thread> threads_;  // one per peer, guarded by mu_
  std::vector<std::shared_ptr<Peer>> peers_;
  double start_time_ = 0.0;
};

struct CollectorOptions {
  bool lockstep = false;  // wait for checkpoint r before collecting past round_target(r+1)
  bool realtime = false;  // pace episodes at the control rate
  TeleopGateway* gateway = nullptr;  // teleop: refs from the gateway, telemetry to it
  double stop_after_sim_seconds = 0.0;  // 0 = run until stop()
};

// The robot role. Episode counters and un-acknowledged uploads are spooled
// under <storage_dir>/collector so a restarted collector keeps ids unique and
// re-sends what the bookkeeper may not have.
class Collector {
 public:
  Collector(const RunConfig& cfg, const Track& track, CollectorOptions opts = {});

  void run();  // until stop() or the configured budget is collected and acknowledged
  void stop() { stopping_ = true; }

  std::uint64_t checkpoint_id() const { return applied_checkpoint_.load(); }
  double sim_seconds() const { return sim_seconds_.load(); }
  std::uint64_t reconnects() const { return reconnects_.load(); }
  // Test hook: drops the connection once after the next upload is sent.
  void inject_disconnect() { inject_disconnect_ = true; }

 private:
  void connect();
  void drain(int timeout_ms);
  void handle(const Frame& f);
  void upload_pending();
  std::pair<Trajectory, EpisodeResult> run_one();
  void load_spool();
  void spool(std::uint64_t traj_id, const Bytes& bytes);
  void unspool(std::uint64_t traj_id);

  RunConfig cfg_;
  const Track* track_;
  CollectorOptions opts_;
  EpisodeSource source_;
  std::filesystem::path spool_dir_;
  std::unique_ptr<Connection> conn_;
  std::deque<std::pair<std::uint64_t, Bytes>> pending_;  // un-acknowledged uploads
  std::optional<Bytes> staged_checkpoint_;
  std::uint64_t staged_id_ = 0;
  std::atomic<std::uint64_t> applied_checkpoint_{0};
  std::atomic<double> sim_seconds_{0.0};
  std::atomic<std::uint64_t> reconnects_{0};
  std::atomic<bool> stopping_{false};
  std::atomic<bool> inject_disconnect_{false};
};

// The HPC role.
class TrainerService {
 public:
  TrainerService(const RunConfig& cfg, const Track& track);

  // Serves snapshots until `max_rounds` rounds are done (0 = until stop()).
  void run(std::uint64_t max_rounds = 0);
  void stop() { stopping_ = true; }
  std::uint64_t rounds_done() const { return rounds_.load(); }
  const TrainerCore& core() const { return core_; }

 private:
  RunConfig cfg_;
  const Track* track_;
  TrainerCore core_;
  std::atomic<std::uint64_t> rounds_{0};
  std::atomic<bool> stopping_{false};
};

// Connects with exponential backoff (100 ms doubling to 2 s) until `stop`.
std::unique_ptr<Connection> connect_with_backoff(const std::string& host, int port,
                                                 const std::atomic<bool>& stop, Role role);

// `all`: bookkeeper, collector and trainer in one process over loopback, in
// lockstep so a seed fixes every byte of metrics.csv.
struct AllResult {
  std::uint64_t rounds = 0;
  double sim_seconds = 0.0;
};
AllResult run_all(const RunConfig& cfg);

}  // namespace dynarace
