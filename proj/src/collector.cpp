#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "dynarace/gateway.hpp"
#include "dynarace/observation.hpp"
#include "dynarace/services.hpp"
#include "dynarace/trajectory_log.hpp"

namespace dynarace {

std::unique_ptr<Connection> connect_with_backoff(const std::string& host, int port,
                                                 const std::atomic<bool>& stop, Role role) {
  int delay_ms = 100;
  while (!stop) {
    try {
      auto conn = std::make_unique<Connection>(connect_tcp(host, port));
      conn->send(MsgType::kHello, encode_hello(Hello{role, kProtoVersion}));
      const auto reply = conn->recv(5000);
      if (reply && reply->type == MsgType::kHello && decode_hello(reply->payload).proto_version == kProtoVersion) {
        return conn;
      }
    } catch (const Error&) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
    delay_ms = std::min(2000, delay_ms * 2);
  }
  throw Error(ErrorCode::kConnectionLost, "stopped while connecting");
}

Collector::Collector(const RunConfig& cfg, const Track& track, CollectorOptions opts)
    : cfg_(cfg), track_(&track), opts_(opts), source_(cfg, track),
      spool_dir_(std::filesystem::path(cfg.storage_dir) / "collector") {
  source_.set_budget(opts.stop_after_sim_seconds);
  load_spool();
}

// state: "<next_episode> <sim_seconds> <warm_seconds>"; pending/<id>.wtrj
// holds each upload until its TRAJ_ACK arrives.
void Collector::load_spool() {
  std::error_code ec;
  std::filesystem::create_directories(spool_dir_ / "pending", ec);
  if (ec) throw Error(ErrorCode::kStorageFailure, "cannot create " + spool_dir_.string());
  std::ifstream in(spool_dir_ / "state");
  std::uint64_t next = 0;
  double sim = 0.0, warm = 0.0;
  if (in >> next >> sim >> warm) source_.resume(next, sim, warm);
  std::vector<std::pair<std::uint64_t, Bytes>> found;
  for (const auto& e : std::filesystem::directory_iterator(spool_dir_ / "pending")) {
    if (e.path().extension() != ".wtrj") continue;
    Bytes b = read_file(e.path());
    try {
      const Trajectory t = decode_trajectory(b);
      found.emplace_back(t.id, std::move(b));
    } catch (const Error&) {
      std::filesystem::remove(e.path(), ec);  // torn spool write
    }
  }
  std::sort(found.begin(), found.end(),
            [](const auto& a, const auto& b) { return (a.first & ~kWarmStartBit) < (b.first & ~kWarmStartBit); });
  for (auto& p : found) pending_.push_back(std::move(p));
  sim_seconds_ = source_.sim_seconds();
}

void Collector::spool(std::uint64_t traj_id, const Bytes& bytes) {
  char state[96];
  std::snprintf(state, sizeof state, "%llu %.17g %.17g\n", static_cast<unsigned long long>(source_.episodes()),
                source_.sim_seconds(), source_.warm_seconds());
  const std::string text(state);
  write_file_atomic(spool_dir_ / "state", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  if (!bytes.empty()) write_file_atomic(spool_dir_ / "pending" / (std::to_string(traj_id) + ".wtrj"), bytes);
}

void Collector::unspool(std::uint64_t traj_id) {
  std::error_code ec;
  std::filesystem::remove(spool_dir_ / "pending" / (std::to_string(traj_id) + ".wtrj"), ec);
}

void Collector::connect() {
  if (conn_) reconnects_ += 1;
  conn_ = connect_with_backoff(cfg_.host, cfg_.collector_port, stopping_, Role::kCollector);
  for (const auto& [id, bytes] : pending_) conn_->send(MsgType::kTrajUpload, bytes);
}

void Collector::handle(const Frame& f) {
  if (f.type == MsgType::kPolicyCheckpoint) {
    const std::uint64_t id = policy_checkpoint_id(f.payload);
    if (id > applied_checkpoint_ && id > staged_id_) {
      staged_checkpoint_ = f.payload;
      staged_id_ = id;
    }
  } else if (f.type == MsgType::kTrajAck) {
    const TrajAck a = decode_traj_ack(f.payload);
    // accepted = 0 means the bookkeeper already holds it.
    std::erase_if(pending_, [&](const auto& p) { return p.first == a.traj_id; });
    unspool(a.traj_id);
  }
}

void Collector::drain(int timeout_ms) {
  auto f = conn_->recv(timeout_ms);
  while (f) {
    handle(*f);
    f = conn_->recv(0);
  }
}

void Collector::upload_pending() {
  while (!pending_.empty() && !stopping_) drain(200);
}

std::pair<Trajectory, EpisodeResult> Collector::run_one() {
  const auto t0 = std::chrono::steady_clock::now();
  TeleopGateway* gw = opts_.gateway;
  const std::uint64_t ckpt = applied_checkpoint_;
  std::shared_ptr<bool> recorded = std::make_shared<bool>(false);
  StepCallback on_step = [&, recorded](const StepInfo& info) {
    if (gw) {
      TelemetryFrame tf;
      tf.est = *info.est;
      tf.s = info.frame.s;
      tf.d = info.frame.d;
      tf.laps = info.laps;
      tf.reward = info.reward_to_date;
      tf.metrics = gw->metrics();
      tf.checkpoint_id = ckpt;
      gw->publish(tf);
    }
    if (opts_.realtime) {
      std::this_thread::sleep_until(t0 + std::chrono::duration<double>((info.step + 1) * cfg_.plant.dt));
    }
  };
  if (!gw) return source_.next(on_step);
  auto ctrl = std::make_shared<AssistController>(cfg_.plant, cfg_.assist);
  const Actor actor = [gw, ctrl, recorded](const EstimatedState& est) {
    const TeleopCommand c = gw->refs();
    *recorded = *recorded || c.recording;
    return (*ctrl)(est, c.speed_ref, c.steer_ref);
  };
  auto result = source_.next_with(actor, true, on_step);
  if (!*recorded) result.first.steps.clear();  // only recorded drives are uploaded
  return result;
}

void Collector::run() {
  connect();
  const double stop_after = opts_.stop_after_sim_seconds;
  while (!stopping_) {
    try {
      drain(0);
      if (staged_checkpoint_) {
        if (source_.deploy(*staged_checkpoint_)) {
          applied_checkpoint_ = source_.checkpoint_id();
          conn_->send(MsgType::kCkptAck, encode_ckpt_ack(CkptAck{applied_checkpoint_}));
        }
        staged_checkpoint_.reset();
      }
      if (stop_after > 0.0 && source_.sim_seconds() + 1e-9 >= stop_after) {
        upload_pending();
        break;
      }
      if (opts_.lockstep && source_.sim_seconds() + 1e-9 >= round_target(cfg_, applied_checkpoint_ + 1)) {
        upload_pending();
        drain(200);
        continue;
      }
      auto [traj, res] = run_one();
      sim_seconds_ = source_.sim_seconds();
      if (traj.steps.empty()) {
        spool(traj.id, {});
        continue;
      }
      pending_.emplace_back(traj.id, encode_trajectory(traj));
      spool(traj.id, pending_.back().second);
      conn_->send(MsgType::kTrajUpload, pending_.back().second);
      if (inject_disconnect_.exchange(false)) conn_->shutdown();
      upload_pending();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kConnectionLost) std::cerr << "collector: " << e.what() << "\n";
      if (stopping_) break;
      try {
        connect();
      } catch (const Error&) {
        break;
      }
    }
  }
}

}  // namespace dynarace
