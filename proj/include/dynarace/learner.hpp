#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dynarace/config.hpp"
#include "dynarace/dynamics_model.hpp"
#include "dynarace/eval.hpp"
#include "dynarace/sac.hpp"
#include "dynarace/track.hpp"

namespace dynarace {

struct RoundMetrics {
  std::uint64_t round = 0;
  std::uint64_t checkpoint_id = 0;
  std::size_t n_traj = 0;
  double sim_s_collected = 0.0;
  double model_nll = 0.0;
  double median_rollout_len = 0.0;
  std::size_t synthetic_transitions = 0;
  std::size_t real_transitions = 0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
  EvalReport eval;
  double host_seconds = 0.0;  // host time spent in the round; excluded from determinism
};

// `key=value` lines, one per field.
std::string format_metrics(const RoundMetrics& m);
RoundMetrics parse_metrics(const std::string& text);

struct RoundOutput {
  std::uint64_t checkpoint_id = 0;
  Bytes checkpoint;
  RoundMetrics metrics;
};

// Model learning and policy optimization for one dataset snapshot at a time.
// All randomness derives from the configured seed and the round index.
class TrainerCore {
 public:
  TrainerCore(const RunConfig& cfg, const Track& track);

  RoundOutput round(std::span<const Trajectory> snapshot);

  std::uint64_t rounds_done() const { return round_; }
  // Continues checkpoint numbering after `id` (trainer restarts).
  void resume_checkpoint_id(std::uint64_t id) { checkpoint_id_ = std::max(checkpoint_id_, id); }
  std::uint64_t last_checkpoint_id() const { return checkpoint_id_; }
  const SacAgent& agent() const { return agent_; }
  const Ensemble& ensemble() const { return ensemble_; }

 private:
  RunConfig cfg_;
  const Track* track_;
  Rng base_;
  Ensemble ensemble_;
  SacAgent agent_;
  ReplayBuffers buffers_;
  std::set<std::uint64_t> ingested_;
  std::uint64_t round_ = 0;
  std::uint64_t checkpoint_id_ = 0;
};

// The robot side: produces one episode at a time, with the assist controller
// until the warm-start budget is used up and the deployed policy afterwards.
class EpisodeSource {
 public:
  EpisodeSource(const RunConfig& cfg, const Track& track);

  // Ignores checkpoints whose id does not exceed the current one.
  bool deploy(std::span<const std::uint8_t> checkpoint);
  std::uint64_t checkpoint_id() const { return checkpoint_id_; }
  bool has_policy() const { return agent_.has_value(); }

  // traj.id carries a monotone episode index, with kWarmStartBit set for
  // assist-driven episodes.
  std::pair<Trajectory, EpisodeResult> next(const StepCallback& on_step = {});
  // Same bookkeeping with an externally supplied actor (teleoperation).
  std::pair<Trajectory, EpisodeResult> next_with(const Actor& actor, bool warm,
                                                 const StepCallback& on_step = {});

  double sim_seconds() const { return sim_seconds_; }
  double warm_seconds() const { return warm_seconds_; }
  std::uint64_t episodes() const { return episode_; }

  // Restores the episode counter after a restart so ids stay monotone.
  void resume(std::uint64_t next_episode, double sim_seconds, double warm_seconds);

  // Episodes are cut short so the total never exceeds `seconds`; 0 = no cap.
  void set_budget(double seconds) { budget_seconds_ = seconds; }

 private:
  RunConfig cfg_;
  const Track* track_;
  std::optional<SacAgent> agent_;
  std::uint64_t checkpoint_id_ = 0;
  std::uint64_t episode_ = 0;
  double sim_seconds_ = 0.0;
  double warm_seconds_ = 0.0;
  double budget_seconds_ = 0.0;
};

Track load_run_track(const RunConfig& cfg);

}  // namespace dynarace
