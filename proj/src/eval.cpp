#include "dynarace/eval.hpp"

#include <cstdio>
#include <memory>

namespace dynarace {

std::string format_report(const EvalReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "laps=%d avg_speed=%.4f peak_speed=%.4f mean_abs_d=%.4f crashes=%d episodes=%d "
                "sim_seconds=%.2f",
                r.laps, r.avg_speed, r.peak_speed, r.mean_abs_d, r.crashes, r.episodes, r.sim_seconds);
  return buf;
}

EvalReport evaluate(const ActorFactory& make_actor, const Track& track, const PlantParams& params,
                    double seconds, Rng& rng) {
  if (!(seconds > 0.0)) throw Error(ErrorCode::kBadConfig, "evaluation seconds must be > 0");
  const long total = std::max(1L, std::lround(seconds / params.dt));
  EvalReport rep;
  long done = 0;
  double speed_sum = 0.0, d_sum = 0.0;
  while (done < total) {
    const int budget = static_cast<int>(std::min<long>(total - done, 1L << 30));
    const auto [traj, res] = run_episode(make_actor(), track, params, budget, rng);
    done += res.steps;
    ++rep.episodes;
    rep.laps += res.laps;
    rep.peak_speed = std::max(rep.peak_speed, res.peak_speed);
    speed_sum += res.mean_speed * res.steps;
    d_sum += res.mean_abs_d * res.steps;
    if (res.crashed || res.off_track) ++rep.crashes;
  }
  rep.avg_speed = speed_sum / static_cast<double>(done);
  rep.mean_abs_d = d_sum / static_cast<double>(done);
  rep.sim_seconds = static_cast<double>(done) * params.dt;
  return rep;
}

Actor policy_actor(const SacAgent& agent, const Track& track, double lookahead_spacing,
                   bool deterministic, Rng* rng) {
  auto obs = std::make_shared<std::vector<float>>(kObsDim);
  return [&agent, &track, lookahead_spacing, deterministic, rng, obs](const EstimatedState& est) {
    make_observation(track, est, lookahead_spacing, *obs);
    Rng unused(0);
    return agent.act(*obs, rng ? *rng : unused, deterministic);
  };
}

Actor assist_actor(const Track& track, const PlantParams& params, const AssistGains& gains,
                   double speed_ref) {
  auto ctrl = std::make_shared<AssistController>(params, gains);
  auto driver = std::make_shared<ScriptedDriver>(track, params, speed_ref, gains);
  return [ctrl, driver](const EstimatedState& est) {
    const DriverRefs refs = (*driver)(est);
    return (*ctrl)(est, refs.speed_ref, refs.steer_ref);
  };
}

EvalReport eval_policy(const SacAgent& agent, const Track& track, const PlantParams& params,
                       double lookahead_spacing, double seconds, Rng& rng) {
  return evaluate([&] { return policy_actor(agent, track, lookahead_spacing, true, nullptr); }, track,
                  params, seconds, rng);
}

EvalReport eval_assist(const Track& track, const PlantParams& params, const AssistGains& gains,
                       double speed_ref, double seconds, Rng& rng) {
  return evaluate([&] { return assist_actor(track, params, gains, speed_ref); }, track, params, seconds,
                  rng);
}

}  // namespace dynarace
