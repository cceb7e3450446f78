#include "dynarace/learner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "dynarace/infoprop.hpp"
#include "dynarace/trajectory_log.hpp"

namespace dynarace {
namespace {

constexpr std::uint64_t kModelStream = 1;
constexpr std::uint64_t kRolloutStream = 2;
constexpr std::uint64_t kUpdateStream = 3;
constexpr std::uint64_t kEvalStream = 4;

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::string format_metrics(const RoundMetrics& m) {
  std::string s;
  auto line = [&](const char* k, const std::string& v) { s += std::string(k) + "=" + v + "\n"; };
  line("round", std::to_string(m.round));
  line("checkpoint_id", std::to_string(m.checkpoint_id));
  line("n_traj", std::to_string(m.n_traj));
  line("sim_s_collected", fmt(m.sim_s_collected));
  line("model_nll", fmt(m.model_nll));
  line("median_rollout_len", fmt(m.median_rollout_len));
  line("synthetic_transitions", std::to_string(m.synthetic_transitions));
  line("real_transitions", std::to_string(m.real_transitions));
  line("actor_loss", fmt(m.actor_loss));
  line("critic_loss", fmt(m.critic_loss));
  line("alpha", fmt(m.alpha));
  line("entropy", fmt(m.entropy));
  line("eval_avg_speed", fmt(m.eval.avg_speed));
  line("eval_peak_speed", fmt(m.eval.peak_speed));
  line("eval_laps", std::to_string(m.eval.laps));
  line("eval_crashes", std::to_string(m.eval.crashes));
  line("eval_mean_abs_d", fmt(m.eval.mean_abs_d));
  line("eval_sim_seconds", fmt(m.eval.sim_seconds));
  line("host_seconds", fmt(m.host_seconds));
  return s;
}

RoundMetrics parse_metrics(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto num = [&](const char* k) { return kv.count(k) ? std::strtod(kv[k].c_str(), nullptr) : 0.0; };
  auto u64 = [&](const char* k) -> std::uint64_t { return kv.count(k) ? std::strtoull(kv[k].c_str(), nullptr, 10) : 0; };
  RoundMetrics m;
  m.round = u64("round");
  m.checkpoint_id = u64("checkpoint_id");
  m.n_traj = u64("n_traj");
  m.sim_s_collected = num("sim_s_collected");
  m.model_nll = num("model_nll");
  m.median_rollout_len = num("median_rollout_len");
  m.synthetic_transitions = u64("synthetic_transitions");
  m.real_transitions = u64("real_transitions");
  m.actor_loss = num("actor_loss");
  m.critic_loss = num("critic_loss");
  m.alpha = num("alpha");
  m.entropy = num("entropy");
  m.eval.avg_speed = num("eval_avg_speed");
  m.eval.peak_speed = num("eval_peak_speed");
  m.eval.laps = static_cast<int>(u64("eval_laps"));
  m.eval.crashes = static_cast<int>(u64("eval_crashes"));
  m.eval.mean_abs_d = num("eval_mean_abs_d");
  m.eval.sim_seconds = num("eval_sim_seconds");
  m.host_seconds = num("host_seconds");
  return m;
}

Track load_run_track(const RunConfig& cfg) {
  if (cfg.track_file.empty()) return default_arena();
  return load_track(cfg.track_file);
}

TrainerCore::TrainerCore(const RunConfig& cfg, const Track& track)
    : cfg_(cfg), track_(&track), base_(Rng(cfg.seed).split(0x747261696e6572ULL)) {
  cfg_.validate();
  ModelConfig mc = cfg_.model;
  mc.threads = cfg_.threads;
  Rng init = base_.split(0);
  Rng model_init = init.split(1), agent_init = init.split(2);
  ensemble_ = Ensemble(mc, model_init);
  agent_ = SacAgent(cfg_.sac, cfg_.plant.torque_max, agent_init);
  buffers_.real = ReplayBuffer(cfg_.real_capacity);
  buffers_.synthetic = ReplayBuffer(cfg_.synthetic_capacity);
}

RoundOutput TrainerCore::round(std::span<const Trajectory> snapshot) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<StateSequence> seqs;
  double sim_s = 0.0;
  for (const auto& t : snapshot) {
    if (!t.steps.empty()) seqs.push_back(to_sequence(t));
    sim_s += t.sim_seconds(cfg_.plant.dt);
  }
  const RawWindows raw = build_raw_windows(seqs, ensemble_.config());
  if (raw.size() == 0) throw Error(ErrorCode::kEmptySnapshot, "snapshot holds no model windows");

  ++round_;
  const Rng rr = base_.split(round_);
  RoundMetrics m;
  m.round = round_;
  m.n_traj = snapshot.size();
  m.sim_s_collected = sim_s;

  // Model.
  const NormStats stats = fit_norm_stats(raw);
  ensemble_.set_stats(stats);
  const Windows windows = normalize_windows(raw, stats);
  Rng model_rng = rr.split(kModelStream);
  const int epochs = round_ == 1 ? cfg_.model_first_epochs : cfg_.model_epochs;
  std::vector<double> nll;
  for (int e = 0; e < epochs; ++e) nll = train_epoch(ensemble_, windows, cfg_.model.adam, model_rng);
  if (nll.empty()) nll = ensemble_.evaluate(windows);
  for (double v : nll) m.model_nll += v / static_cast<double>(nll.size());

  // Real replay holds each trajectory once, in snapshot order.
  for (const auto& t : snapshot) {
    if (ingested_.insert(t.id).second) {
      add_trajectory(buffers_.real, t, *track_, cfg_.rollout.lookahead_spacing);
    }
  }
  agent_.renormalize(ObsNormalizer::fit(buffers_.real.observations()));
  m.real_transitions = buffers_.real.size();

  // Synthetic rollouts from the current policy.
  RolloutConfig rc = cfg_.rollout;
  rc.threads = cfg_.threads;
  rc.data_var = target_variance(windows);
  const BatchPolicy policy = [this](const Eigen::MatrixXf& obs, const Eigen::MatrixXf& noise,
                                    Eigen::MatrixXf& actions) {
    agent_.act_batch(obs, noise, false, actions);
  };
  const EnsembleDeltaModel model(ensemble_);
  const RolloutContext ctx{&model, &policy, track_, &cfg_.plant};
  Rng rollout_rng = rr.split(kRolloutStream);
  GenerateStats gs;
  const RolloutBatch synth = generate(ctx, seqs, rc, rollout_rng, &gs);
  buffers_.synthetic.clear();
  buffers_.synthetic.add_batch(synth);
  m.synthetic_transitions = synth.size();
  m.median_rollout_len = gs.median_length;

  // Policy.
  Rng update_rng = rr.split(kUpdateStream);
  double actor = 0.0, critic = 0.0, alpha = agent_.alpha(), entropy = 0.0;
  for (int k = 0; k < cfg_.sac_updates; ++k) {
    const Batch b = mix_sample(buffers_, cfg_.sac.ratio_real, cfg_.sac.batch, update_rng);
    const SacLosses l = agent_.update_step(b, update_rng);
    actor += l.actor;
    critic += l.critic;
    alpha = l.alpha;
    entropy += l.entropy;
  }
  const double k_updates = std::max(1, cfg_.sac_updates);
  m.actor_loss = actor / k_updates;
  m.critic_loss = critic / k_updates;
  m.alpha = alpha;
  m.entropy = entropy / k_updates;

  RoundOutput out;
  out.checkpoint_id = ++checkpoint_id_;
  out.checkpoint = serialize_policy(agent_, out.checkpoint_id);
  m.checkpoint_id = out.checkpoint_id;

  if (cfg_.eval_seconds > 0.0) {
    Rng eval_rng = rr.split(kEvalStream);
    m.eval = eval_policy(agent_, *track_, cfg_.plant, cfg_.rollout.lookahead_spacing, cfg_.eval_seconds,
                         eval_rng);
  }
  m.host_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.metrics = m;
  return out;
}

EpisodeSource::EpisodeSource(const RunConfig& cfg, const Track& track) : cfg_(cfg), track_(&track) {}

bool EpisodeSource::deploy(std::span<const std::uint8_t> checkpoint) {
  std::uint64_t id = 0;
  SacAgent agent = deserialize_policy(checkpoint, &id);
  if (id <= checkpoint_id_) return false;
  agent_ = std::move(agent);
  checkpoint_id_ = id;
  return true;
}

void EpisodeSource::resume(std::uint64_t next_episode, double sim_seconds, double warm_seconds) {
  episode_ = std::max(episode_, next_episode);
  sim_seconds_ = sim_seconds;
  warm_seconds_ = warm_seconds;
}

std::pair<Trajectory, EpisodeResult> EpisodeSource::next(const StepCallback& on_step) {
  const bool warm = !agent_.has_value();
  if (warm) return next_with(assist_actor(*track_, cfg_.plant, cfg_.assist, cfg_.warmstart_speed), true, on_step);
  Rng policy_rng = Rng(cfg_.seed).split(0x706f6c696379ULL).split(episode_);
  return next_with(policy_actor(*agent_, *track_, cfg_.rollout.lookahead_spacing, false, &policy_rng), false,
                   on_step);
}

std::pair<Trajectory, EpisodeResult> EpisodeSource::next_with(const Actor& actor, bool warm,
                                                              const StepCallback& on_step) {
  Rng rng = Rng(cfg_.seed).split(0x636f6c6c6563ULL).split(episode_);
  int steps = cfg_.episode_steps;
  if (budget_seconds_ > 0.0) {
    const double left = std::max(0.0, budget_seconds_ - sim_seconds_);
    steps = std::clamp<int>(static_cast<int>(std::llround(left / cfg_.plant.dt)), 1, steps);
  }
  auto result = run_episode(actor, *track_, cfg_.plant, steps, rng, on_step);
  result.first.id = episode_ | (warm ? kWarmStartBit : 0);
  ++episode_;
  const double secs = result.first.sim_seconds(cfg_.plant.dt);
  sim_seconds_ += secs;
  if (warm) warm_seconds_ += secs;
  return result;
}

}  // namespace dynarace
