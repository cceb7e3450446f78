#include <cstdio>
#include <iostream>

#include "dynarace/services.hpp"
#include "dynarace/trajectory_log.hpp"

namespace dynarace {

TrainerService::TrainerService(const RunConfig& cfg, const Track& track)
    : cfg_(cfg), track_(&track), core_(cfg, track) {}

void TrainerService::run(std::uint64_t max_rounds) {
  while (!stopping_ && (max_rounds == 0 || rounds_ < max_rounds)) {
    std::unique_ptr<Connection> conn;
    try {
      conn = connect_with_backoff(cfg_.host, cfg_.trainer_port, stopping_, Role::kTrainer);
    } catch (const Error&) {
      break;
    }
    try {
      while (!stopping_ && (max_rounds == 0 || rounds_ < max_rounds)) {
        const auto f = conn->recv(250);
        if (!f || f->type != MsgType::kDatasetSnapshot) continue;
        const DatasetSnapshot snap = decode_snapshot(f->payload);
        std::vector<Trajectory> trajs;
        trajs.reserve(snap.trajectories.size());
        for (const auto& b : snap.trajectories) trajs.push_back(decode_trajectory(b));
        if (trajs.empty()) throw Error(ErrorCode::kEmptySnapshot, "snapshot holds no trajectories");
        core_.resume_checkpoint_id(snap.snapshot_id - 1);
        const RoundOutput out = core_.round(trajs);
        conn->send(MsgType::kPolicyCheckpoint, out.checkpoint);
        conn->send(MsgType::kMetrics, encode_metrics(format_metrics(out.metrics)));
        const auto& m = out.metrics;
        std::fprintf(stderr,
                     "trainer: round %llu sim=%.0fs nll=%.3f rollout_median=%.0f eval_speed=%.3f "
                     "eval_laps=%d crashes=%d (%.1fs)\n",
                     static_cast<unsigned long long>(m.round), m.sim_s_collected, m.model_nll,
                     m.median_rollout_len, m.eval.avg_speed, m.eval.laps, m.eval.crashes, m.host_seconds);
        rounds_ += 1;
      }
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kConnectionLost) {
        std::cerr << "trainer: " << e.what() << "\n";
        if (e.code() != ErrorCode::kMalformedPayload) throw;
      }
    }
  }
}

}  // namespace dynarace
