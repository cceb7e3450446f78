#include "dynarace/plant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dynarace/error.hpp"

namespace dynarace {

template <class Tag>
bool StateVector<Tag>::finite() const {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}
template struct StateVector<PlantTag>;
template struct StateVector<EstimateTag>;

void PlantParams::validate() const {
  if (!(dt > 0.0)) throw Error(ErrorCode::kBadConfig, "plant.dt must be > 0");
  if (!(mu_g > 0.0)) throw Error(ErrorCode::kBadConfig, "plant.mu_g must be > 0");
  if (!(est_beta > 0.0 && est_beta <= 1.0)) {
    throw Error(ErrorCode::kBadConfig, "plant.est_beta must lie in (0, 1]");
  }
  if (!(torque_max > 0.0)) throw Error(ErrorCode::kBadConfig, "plant.torque_max must be > 0");
  if (!(roll_crash > 0.0)) throw Error(ErrorCode::kBadConfig, "plant.roll_crash must be > 0");
  if (!(est_sigma >= 0.0)) throw Error(ErrorCode::kBadConfig, "plant.est_sigma must be >= 0");
  if (!(process_noise >= 0.0)) {
    throw Error(ErrorCode::kBadConfig, "plant.process_noise must be >= 0");
  }
}

Action clamp_action(const Action& a, double torque_max) {
  return Action{std::clamp(a.drive, -torque_max, torque_max),
                std::clamp(a.reaction, -torque_max, torque_max)};
}

double lateral_acceleration(const PlantState& s, const PlantParams& p) {
  return std::clamp(s.speed() * s.yaw_rate(), -p.mu_g, p.mu_g);
}

PlantState step_plant(const PlantState& state, const Action& action, const PlantParams& p,
                      Rng& rng) {
  if (!state.finite() || !std::isfinite(action.drive) || !std::isfinite(action.reaction)) {
    throw Error(ErrorCode::kNonFiniteState, "non-finite plant state or action");
  }
  const Action a = clamp_action(action, p.torque_max);
  const double v = state.speed();
  const double roll = state.roll();
  const double yaw_rate = state.yaw_rate();
  const double demand = v * yaw_rate;
  const double a_lat = std::clamp(demand, -p.mu_g, p.mu_g);

  double dv = p.c_tau * a.drive - p.c_v * v;
  double droll_rate = p.g_l * std::sin(roll) - p.j_b * a.reaction - p.k_cent * a_lat;
  const double dwheel = p.j_r * a.reaction;
  double dyaw_rate = p.k_lean * v * std::sin(roll) +
                     p.k_gyro * state.roll_rate() * state.wheel_speed() - p.c_psi * yaw_rate;
  const double dslip = -(demand - a_lat) - p.c_slip * state.slip_speed();
  if (p.process_noise > 0.0) {
    dv += p.process_noise * rng.normal();
    droll_rate += p.process_noise * rng.normal();
    dyaw_rate += p.process_noise * rng.normal();
  }

  // Semi-implicit Euler: velocities first, positions with the new velocities.
  PlantState next = state;
  const double dt = p.dt;
  next[kSpeed] = v + dt * dv;
  next[kRollRate] = state.roll_rate() + dt * droll_rate;
  next[kWheelSpeed] = state.wheel_speed() + dt * dwheel;
  next[kYawRate] = yaw_rate + dt * dyaw_rate;
  next[kSlipSpeed] = state.slip_speed() + dt * dslip;
  next[kRoll] = roll + dt * next.roll_rate();
  next[kYaw] = state.yaw() + dt * next.yaw_rate();
  const double c = std::cos(next.yaw()), s = std::sin(next.yaw());
  next[kX] = state.x() + dt * (next.speed() * c - next.slip_speed() * s);
  next[kY] = state.y() + dt * (next.speed() * s + next.slip_speed() * c);
  return next;
}

EstimatedState estimate(const EstimatedState& prev_est, const PlantState& plant,
                        const PlantParams& p, Rng& rng) {
  EstimatedState est;
  for (int i = 0; i < kStateDim; ++i) {
    double e = (1.0 - p.est_beta) * prev_est[i] + p.est_beta * plant[i];
    if (p.est_sigma > 0.0) e += p.est_sigma * p.est_scale[static_cast<std::size_t>(i)] * rng.normal();
    est[i] = e;
  }
  return est;
}

bool is_crashed(double roll, const PlantParams& params) {
  return std::abs(roll) > params.roll_crash;
}

double reward_from_frames(const Track& track, const TrackFrame& prev, const TrackFrame& curr,
                          bool off_track, bool crashed, const PlantParams& p) {
  const double ds = progress(track, prev.s, curr.s);
  double r = p.w_v * (ds / p.dt) - p.w_d * curr.d * curr.d;
  if (off_track || crashed) r -= p.r_term;
  return r;
}

double reward(const Track& track, const PlantState& prev_plant, const PlantState& plant,
              bool off_track, bool crashed, const PlantParams& params) {
  const TrackFrame prev = track.project(Vec2{prev_plant.x(), prev_plant.y()});
  const TrackFrame curr = track.project(Vec2{plant.x(), plant.y()});
  return reward_from_frames(track, prev, curr, off_track, crashed, params);
}

Action AssistController::operator()(const EstimatedState& est, double speed_ref,
                                    double steer_ref) {
  const PlantParams& p = params_;
  const double steer = std::clamp(std::isfinite(steer_ref) ? steer_ref : 0.0, -1.0, 1.0);
  const double v_ref = std::isfinite(speed_ref) ? speed_ref : 0.0;
  const double roll_ref = gains_.k_steer * steer;
  const double a_lat = std::clamp(est.speed() * est.yaw_rate(), -p.mu_g, p.mu_g);

  // Feedforward holds the reference lean against gravity and centripetal load;
  // the PD part places roll-error poles at kp/kd.
  const double roll_acc = p.g_l * std::sin(roll_ref) - p.k_cent * a_lat +
                          gains_.kp_roll * (est.roll() - roll_ref) +
                          gains_.kd_roll * est.roll_rate();
  const double reaction = roll_acc / p.j_b;

  const double err = v_ref - est.speed();
  double drive = gains_.kp_speed * err + gains_.ki_speed * speed_integral_;
  if (std::abs(drive) < p.torque_max || drive * err < 0.0) {
    speed_integral_ += err * p.dt;  // conditional integration as anti-windup
  }
  drive = gains_.kp_speed * err + gains_.ki_speed * speed_integral_;
  return clamp_action(Action{drive, reaction}, p.torque_max);
}

DriverRefs ScriptedDriver::operator()(const EstimatedState& est) const {
  const TrackFrame f = track_->project(est.pose());
  const double kappa = track_->curvature_at(f.s + 0.1);
  const double kappa_des = kappa - 6.0 * f.d - 3.0 * f.heading_err;
  const double v_eff = std::max(est.speed(), 0.05);
  const double rate_des = v_eff * kappa_des;
  const double sin_roll =
      params_.c_psi * rate_des / (params_.k_lean * v_eff) + 0.3 * (rate_des - est.yaw_rate());
  const double roll_ref = std::clamp(sin_roll, -1.0, 1.0);
  DriverRefs refs;
  refs.speed_ref = speed_ref_;
  refs.steer_ref = std::clamp(std::asin(roll_ref) / gains_.k_steer, -1.0, 1.0);
  return refs;
}

PlantState sample_initial_state(const Track& track, Rng& rng) {
  const double s = rng.uniform(0.0, track.length());
  const Vec2 p = track.point_at(s);
  PlantState st;
  st[kX] = p.x;
  st[kY] = p.y;
  st[kYaw] = track.heading_at(s);
  st[kRoll] = rng.uniform(-0.02, 0.02);
  st[kSpeed] = rng.uniform(0.0, 0.05);
  return st;
}

std::pair<Trajectory, EpisodeResult> run_episode(const Actor& actor, const Track& track,
                                                 const PlantParams& params, int max_steps,
                                                 Rng& rng, const StepCallback& on_step) {
  const PlantState init = sample_initial_state(track, rng);
  return run_episode_from(init, actor, track, params, max_steps, rng, on_step);
}

std::pair<Trajectory, EpisodeResult> run_episode_from(const PlantState& initial,
                                                      const Actor& actor, const Track& track,
                                                      const PlantParams& params, int max_steps,
                                                      Rng& rng, const StepCallback& on_step) {
  if (max_steps < 1) throw Error(ErrorCode::kBadConfig, "max_steps must be >= 1");
  Trajectory traj;
  EpisodeResult res;
  traj.steps.reserve(static_cast<std::size_t>(max_steps));

  PlantState plant = initial;
  EstimatedState est;
  est.v = plant.v;
  TrackFrame frame = track.project(Vec2{plant.x(), plant.y()});
  double speed_sum = 0.0, d_sum = 0.0, reward_sum = 0.0;

  for (int k = 0; k < max_steps; ++k) {
    const Action raw = actor(est);
    if (!std::isfinite(raw.drive) || !std::isfinite(raw.reaction)) {
      throw Error(ErrorCode::kActorFailure, "actor returned a non-finite action");
    }
    const Action action = clamp_action(raw, params.torque_max);
    const PlantState next = step_plant(plant, action, params, rng);
    const EstimatedState next_est = estimate(est, next, params, rng);
    const TrackFrame next_frame = track.project(Vec2{next.x(), next.y()});
    const bool crashed = is_crashed(next.roll(), params);
    const bool off = is_off_track(track, next_frame);
    const double r = reward_from_frames(track, frame, next_frame, off, crashed, params);

    res.progress += progress(track, frame.s, next_frame.s);
    res.laps = std::max(res.laps, static_cast<int>(std::floor(res.progress / track.length())));
    const double speed = std::abs(next.speed());
    speed_sum += speed;
    d_sum += std::abs(next_frame.d);
    res.peak_speed = std::max(res.peak_speed, speed);
    reward_sum += r;

    TrajectoryStep step{est, action, r, crashed || off, false};
    if (!step.terminated && k + 1 == max_steps) step.truncated = true;
    traj.steps.push_back(step);

    plant = next;
    est = next_est;
    frame = next_frame;
    res.steps = k + 1;

    if (on_step) {
      StepInfo info;
      info.step = k;
      info.plant = &plant;
      info.est = &est;
      info.frame = frame;
      info.action = action;
      info.reward_to_date = reward_sum;
      info.laps = res.laps;
      on_step(info);
    }
    if (step.terminated) {
      res.crashed = crashed;
      res.off_track = off;
      break;
    }
    res.truncated = step.truncated;
  }
  res.mean_speed = speed_sum / res.steps;
  res.mean_abs_d = d_sum / res.steps;
  return {std::move(traj), res};
}

}  // namespace dynarace
