#include <doctest.h>

#include <cmath>

#include "dynarace/eval.hpp"
#include "dynarace/plot.hpp"

using namespace dynarace;

TEST_CASE("zero-action policy makes no progress") {
  const Track track = default_arena();
  const PlantParams params;
  Rng rng(1);
  SacConfig cfg;
  cfg.hidden = {16, 16};
  const SacAgent agent(cfg, params.torque_max, rng);
  Rng eval_rng(2);
  const EvalReport r = eval_policy(agent, track, params, 0.1, 20.0, eval_rng);
  CHECK(r.laps == 0);
  // An uncontrolled balancer falls over; the fall itself moves it a little.
  CHECK(r.crashes >= 1);
  CHECK(r.avg_speed < 0.05);
  CHECK(r.peak_speed >= r.avg_speed);
  CHECK(r.sim_seconds == doctest::Approx(20.0).epsilon(0.001));
}

TEST_CASE("assist baseline at 0.15 m/s") {
  const Track track = default_arena();
  const PlantParams params;
  Rng rng(3);
  const EvalReport r = eval_assist(track, params, AssistGains{}, 0.15, 120.0, rng);
  CHECK(r.avg_speed >= 0.10);
  CHECK(r.avg_speed <= 0.20);
  CHECK(r.peak_speed >= r.avg_speed);
  CHECK(r.crashes == 0);
  CHECK(r.laps >= 1);
}

TEST_CASE("evaluation is reproducible for a seed") {
  const Track track = default_arena();
  const PlantParams params;
  Rng init(4);
  SacConfig cfg;
  cfg.hidden = {16, 16};
  SacAgent agent(cfg, params.torque_max, init);
  for (auto& p : agent.mutable_actor().params()) p += static_cast<float>(0.05 * init.normal());
  Rng a(5), b(5);
  const EvalReport ra = eval_policy(agent, track, params, 0.1, 15.0, a);
  const EvalReport rb = eval_policy(agent, track, params, 0.1, 15.0, b);
  CHECK(ra == rb);
  CHECK(ra.peak_speed >= ra.avg_speed);
  CHECK(ra.avg_speed >= 0.0);
}

TEST_CASE("report text names every field") {
  EvalReport r;
  r.laps = 3;
  r.avg_speed = 0.25;
  const std::string text = format_report(r);
  for (const char* key : {"laps", "avg_speed", "peak_speed", "mean_abs_d", "crashes", "sim_seconds"}) {
    CHECK(text.find(key) != std::string::npos);
  }
}

TEST_CASE("trajectory plot outputs") {
  const Track track = default_arena();
  const PlantParams params;
  Rng rng(6);
  const Actor actor = assist_actor(track, params, AssistGains{}, 0.15);
  const auto [traj, res] = run_episode(actor, track, params, 300, rng);
  const std::string csv = trajectory_csv(track, traj, params.dt);
  CHECK(csv.rfind("step,t,x,y,speed,s,d\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(traj.steps.size()) + 1);
  const std::string svg = trajectory_svg(track, traj);
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(svg.find("</svg>") != std::string::npos);
}
