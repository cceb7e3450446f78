#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "dynarace/services.hpp"
#include "dynarace/trajectory_log.hpp"

namespace dynarace {
namespace fs = std::filesystem;

namespace {

double host_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace

double round_target(const RunConfig& cfg, std::uint64_t round) {
  const double first = cfg.warmstart_seconds > 0.0 ? cfg.warmstart_seconds : cfg.round_sim_seconds;
  return first + static_cast<double>(round - 1) * cfg.round_sim_seconds;
}

std::uint64_t planned_rounds(const RunConfig& cfg) {
  if (cfg.rounds > 0) return static_cast<std::uint64_t>(cfg.rounds);
  std::uint64_t r = 0;
  while (round_target(cfg, r + 1) <= cfg.max_sim_seconds + 1e-9) ++r;
  return std::max<std::uint64_t>(r, 1);
}

struct Bookkeeper::Peer {
  explicit Peer(Socket s) : conn(std::move(s)) {}
  Connection conn;
};

Bookkeeper::Bookkeeper(const RunConfig& cfg, bool lockstep)
    : cfg_(cfg),
      lockstep_(lockstep),
      collector_listener_(cfg.host, cfg.collector_port),
      trainer_listener_(cfg.host, cfg.trainer_port),
      ledger_(cfg.storage_dir) {
  for (const auto& e : ledger_.state().entries) logs_.push_back(ledger_.trajectory_bytes(e.traj_id));
  latest_checkpoint_ = ledger_.state().deployed_checkpoint;
  for (std::uint64_t id = latest_checkpoint_ + 1; fs::exists(ledger_.checkpoint_path(id)); ++id) {
    latest_checkpoint_ = id;
  }
  std::ifstream csv(fs::path(cfg.storage_dir) / "metrics.csv");
  std::string line;
  while (std::getline(csv, line)) {
    if (!line.empty()) ++metrics_rows_;
  }
  if (metrics_rows_ > 0) --metrics_rows_;  // header
  start_time_ = host_seconds();
}

Bookkeeper::~Bookkeeper() { stop(); }

void Bookkeeper::start() {
  accept_threads_[0] = std::thread([this] { accept_loop(collector_listener_, Role::kCollector); });
  accept_threads_[1] = std::thread([this] { accept_loop(trainer_listener_, Role::kTrainer); });
}

void Bookkeeper::stop() {
  if (stopping_.exchange(true)) return;
  collector_listener_.shutdown();
  trainer_listener_.shutdown();
  for (auto& t : accept_threads_) {
    if (t.joinable()) t.join();
  }
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(mu_);
    for (auto& p : peers_) p->conn.shutdown();
    threads.swap(threads_);
  }
  for (auto& t : threads) {
    if (t.joinable()) t.join();
  }
  cv_.notify_all();
}

LedgerState Bookkeeper::ledger_state() const {
  std::lock_guard lock(mu_);
  return ledger_.state();
}

std::uint64_t Bookkeeper::metrics_rows() const {
  std::lock_guard lock(mu_);
  return metrics_rows_;
}

bool Bookkeeper::wait_metrics(std::uint64_t rows, int timeout_ms) const {
  std::unique_lock lock(mu_);
  return cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                      [&] { return metrics_rows_ >= rows || stopping_.load(); }) &&
         metrics_rows_ >= rows;
}

void Bookkeeper::accept_loop(Listener& l, Role role) {
  while (!stopping_) {
    Socket s = l.accept();
    if (!s.valid()) break;
    auto peer = std::make_shared<Peer>(std::move(s));
    std::lock_guard lock(mu_);
    if (stopping_) break;
    peers_.push_back(peer);
    threads_.emplace_back([this, peer, role] { serve(peer, role); });
  }
}

void Bookkeeper::serve(std::shared_ptr<Peer> peer, Role role) {
  try {
    const auto first = peer->conn.recv(10'000);
    if (!first || first->type != MsgType::kHello) throw Error(ErrorCode::kMalformedPayload, "expected HELLO");
    const Hello h = decode_hello(first->payload);
    if (h.proto_version != kProtoVersion) {
      throw Error(ErrorCode::kProtocolVersion, "peer speaks protocol " + std::to_string(h.proto_version));
    }
    if (h.role != role) throw Error(ErrorCode::kMalformedPayload, "HELLO role does not match port");
    peer->conn.send(MsgType::kHello, encode_hello(Hello{role, kProtoVersion}));

    std::vector<std::function<void()>> sends;
    {
      std::lock_guard lock(mu_);
      if (role == Role::kCollector) {
        collector_ = peer;
        if (latest_checkpoint_ > 0) {
          auto bytes = std::make_shared<Bytes>(read_file(ledger_.checkpoint_path(latest_checkpoint_)));
          sends.push_back([peer, bytes] { peer->conn.send(MsgType::kPolicyCheckpoint, *bytes); });
        }
      } else {
        trainer_ = peer;
        trainer_ready_ = true;
        maybe_seal_locked(sends);
      }
    }
    for (auto& s : sends) s();

    while (!stopping_) {
      const auto f = peer->conn.recv(-1);
      if (!f) continue;
      validate_payload(*f);
      switch (f->type) {
        case MsgType::kTrajUpload:
          if (role == Role::kCollector) on_upload(peer, *f);
          break;
        case MsgType::kCkptAck: {
          const CkptAck a = decode_ckpt_ack(f->payload);
          std::lock_guard lock(mu_);
          ledger_.record_deployment(a.checkpoint_id);
          break;
        }
        case MsgType::kPolicyCheckpoint:
          if (role == Role::kTrainer) on_checkpoint(*f);
          break;
        case MsgType::kMetrics:
          if (role == Role::kTrainer) on_metrics(*f);
          break;
        default:
          break;
      }
    }
  } catch (const Error& e) {
    if (!stopping_ && e.code() != ErrorCode::kConnectionLost) {
      std::cerr << "bookkeeper: dropping peer: " << e.what() << "\n";
    }
  }
  std::lock_guard lock(mu_);
  if (collector_ == peer) collector_.reset();
  if (trainer_ == peer) {
    trainer_.reset();
    trainer_ready_ = false;
  }
  peer->conn.shutdown();
}

void Bookkeeper::on_upload(const std::shared_ptr<Peer>& peer, const Frame& f) {
  const Trajectory t = decode_trajectory(f.payload);
  std::vector<std::function<void()>> sends;
  bool accepted = false;
  {
    std::lock_guard lock(mu_);
    try {
      accepted = ledger_.ingest(t.id, f.payload, t.sim_seconds(cfg_.plant.dt));
    } catch (const Error& e) {
      // Without an ack the collector keeps the trajectory and retries.
      std::cerr << "bookkeeper: " << e.what() << "\n";
      return;
    }
    if (accepted) logs_.push_back(f.payload);
    maybe_seal_locked(sends);
  }
  peer->conn.send(MsgType::kTrajAck, encode_traj_ack(TrajAck{t.id, accepted}));
  for (auto& s : sends) s();
}

void Bookkeeper::maybe_seal_locked(std::vector<std::function<void()>>& sends) {
  if (!trainer_ || !trainer_ready_ || logs_.empty()) return;
  const std::uint64_t next = ledger_.state().snapshots.size() + 1;
  if (ledger_.state().total_sim_seconds() + 1e-9 < round_target(cfg_, next)) return;
  DatasetSnapshot snap;
  snap.snapshot_id = next;
  snap.trajectories = logs_;
  auto payload = std::make_shared<Bytes>(
      ledger_.seal_snapshot(next, encode_snapshot(snap), static_cast<std::uint64_t>(logs_.size())));
  trainer_ready_ = false;
  auto peer = trainer_;
  sends.push_back([peer, payload] { peer->conn.send(MsgType::kDatasetSnapshot, *payload); });
}

void Bookkeeper::on_checkpoint(const Frame& f) {
  const std::uint64_t id = policy_checkpoint_id(f.payload);
  std::shared_ptr<Peer> collector;
  {
    std::lock_guard lock(mu_);
    ledger_.store_checkpoint(id, f.payload);
    latest_checkpoint_ = std::max(latest_checkpoint_, id);
    collector = collector_;
  }
  if (collector) {
    try {
      collector->conn.send(MsgType::kPolicyCheckpoint, f.payload);
    } catch (const Error&) {
      // The collector receives the latest checkpoint when it reconnects.
    }
  }
}

void Bookkeeper::on_metrics(const Frame& f) {
  const RoundMetrics m = parse_metrics(decode_metrics(f.payload));
  std::vector<std::function<void()>> sends;
  {
    std::lock_guard lock(mu_);
    const fs::path path = fs::path(cfg_.storage_dir) / "metrics.csv";
    const bool fresh = !fs::exists(path) || fs::file_size(path) == 0;
    std::ofstream out(path, std::ios::app);
    if (fresh) out << kMetricsHeader << "\n";
    const double wall = lockstep_ ? m.sim_s_collected : host_seconds() - start_time_;
    char buf[512];
    std::snprintf(buf, sizeof buf, "%llu,%.3f,%.3f,%.9g,%.9g,%.9g,%.9g,%.9g,%d",
                  static_cast<unsigned long long>(m.round), wall, m.sim_s_collected, m.model_nll,
                  m.median_rollout_len, m.actor_loss, m.critic_loss, m.eval.avg_speed, m.eval.laps);
    out << buf << "\n";
    out.flush();
    ++metrics_rows_;
    trainer_ready_ = true;
    maybe_seal_locked(sends);
  }
  cv_.notify_all();
  for (auto& s : sends) s();
}

}  // namespace dynarace
