#pragma once

#include <functional>
#include <string>

#include "dynarace/plant.hpp"
#include "dynarace/sac.hpp"
#include "dynarace/track.hpp"

namespace dynarace {

struct EvalReport {
  int laps = 0;
  double avg_speed = 0.0;   // mean |v| over all evaluated steps
  double peak_speed = 0.0;
  double mean_abs_d = 0.0;
  int crashes = 0;          // terminated episodes (crash or off-track)
  int episodes = 0;
  double sim_seconds = 0.0;
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

std::string format_report(const EvalReport& r);

// Builds a fresh actor for each episode (controllers may carry state).
using ActorFactory = std::function<Actor()>;

// Runs back-to-back episodes until `seconds` of simulated time have elapsed;
// a terminated episode is followed by a fresh start.
EvalReport evaluate(const ActorFactory& make_actor, const Track& track, const PlantParams& params,
                    double seconds, Rng& rng);

EvalReport eval_policy(const SacAgent& agent, const Track& track, const PlantParams& params,
                       double lookahead_spacing, double seconds, Rng& rng);

// The assist controller driven by the scripted operator at `speed_ref`.
EvalReport eval_assist(const Track& track, const PlantParams& params, const AssistGains& gains,
                       double speed_ref, double seconds, Rng& rng);

Actor policy_actor(const SacAgent& agent, const Track& track, double lookahead_spacing,
                   bool deterministic, Rng* rng);
Actor assist_actor(const Track& track, const PlantParams& params, const AssistGains& gains,
                   double speed_ref);

}  // namespace dynarace
