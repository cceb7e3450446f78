#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "dynarace/rng.hpp"
#include "dynarace/track.hpp"

namespace dynarace {

inline constexpr int kStateDim = 9;
inline constexpr int kActionDim = 2;

enum StateIndex : int {
  kX = 0,
  kY,
  kYaw,
  kRoll,
  kSpeed,
  kYawRate,
  kRollRate,
  kWheelSpeed,
  kSlipSpeed,
};

using StateArray = std::array<double, kStateDim>;

// Nine-dimensional physics state of the robot. The tag separates ground-truth
// plant states from estimator output at compile time.
template <class Tag>
struct StateVector {
  StateArray v{};

  double& operator[](int i) { return v[static_cast<std::size_t>(i)]; }
  double operator[](int i) const { return v[static_cast<std::size_t>(i)]; }

  double x() const { return v[kX]; }
  double y() const { return v[kY]; }
  double yaw() const { return v[kYaw]; }
  double roll() const { return v[kRoll]; }
  double speed() const { return v[kSpeed]; }
  double yaw_rate() const { return v[kYawRate]; }
  double roll_rate() const { return v[kRollRate]; }
  double wheel_speed() const { return v[kWheelSpeed]; }
  double slip_speed() const { return v[kSlipSpeed]; }

  Pose pose() const { return Pose{v[kX], v[kY], v[kYaw]}; }
  bool finite() const;

  friend bool operator==(const StateVector&, const StateVector&) = default;
};

struct PlantTag {};
struct EstimateTag {};
using PlantState = StateVector<PlantTag>;
using EstimatedState = StateVector<EstimateTag>;

struct Action {
  double drive = 0.0;     // N·m
  double reaction = 0.0;  // N·m

  friend bool operator==(const Action&, const Action&) = default;
};

// Mass-normalized coefficients of the stand-in dynamics:
//   v'      = c_tau*tau_d - c_v*v
//   roll''  = g_l*sin(roll) - j_b*tau_r - k_cent*a_lat
//   w_r'    = j_r*tau_r
//   yaw''   = k_lean*v*sin(roll) + k_gyro*roll'*w_r - c_psi*yaw'
//   v_slip' = -(v*yaw' - a_lat) - c_slip*v_slip
//   x'      = v*cos(yaw) - v_slip*sin(yaw)
//   y'      = v*sin(yaw) + v_slip*cos(yaw)
// with a_lat = clamp(v*yaw', -mu_g, mu_g) the lateral acceleration the tire
// can actually deliver.
struct PlantParams {
  double c_tau = 20.0;
  double c_v = 0.8;
  double g_l = 40.0;
  double j_b = 50.0;
  double k_cent = 2.0;
  double j_r = 20.0;
  double k_lean = 60.0;
  double k_gyro = 0.02;
  double c_psi = 1.5;
  double mu_g = 3.0;
  double c_slip = 4.0;
  double roll_crash = 0.4;
  double torque_max = 0.2;
  double dt = 0.01;
  double process_noise = 0.0;  // std of additive noise on accelerations

  double est_beta = 0.6;
  double est_sigma = 0.005;
  StateArray est_scale{0.02, 0.02, 0.02, 0.05, 0.2, 0.5, 1.0, 5.0, 0.1};

  double w_v = 1.0;
  double w_d = 4.0;
  double r_term = 10.0;

  void validate() const;
};

Action clamp_action(const Action& a, double torque_max);

double lateral_acceleration(const PlantState& s, const PlantParams& p);  // realized, |.| <= mu_g

PlantState step_plant(const PlantState& state, const Action& action, const PlantParams& params,
                      Rng& rng);

EstimatedState estimate(const EstimatedState& prev_est, const PlantState& plant,
                        const PlantParams& params, Rng& rng);

bool is_crashed(double roll, const PlantParams& params);

double reward_from_frames(const Track& track, const TrackFrame& prev, const TrackFrame& curr,
                          bool off_track, bool crashed, const PlantParams& params);
double reward(const Track& track, const PlantState& prev_plant, const PlantState& plant,
              bool off_track, bool crashed, const PlantParams& params);

struct AssistGains {
  double k_steer = 0.15;  // lean reference (rad) at full steer
  double kp_roll = 150.0;  // roll''-units per rad
  double kd_roll = 20.0;
  double kp_speed = 3.0;  // N·m per (m/s)
  double ki_speed = 1.0;
};

// Stand-in for the human-driven baseline controller: PD roll stabilization
// toward a steer-dependent lean reference plus PI speed tracking.
class AssistController {
 public:
  AssistController(const PlantParams& params, const AssistGains& gains = {})
      : params_(params), gains_(gains) {}

  Action operator()(const EstimatedState& est, double speed_ref, double steer_ref);
  void reset() { speed_integral_ = 0.0; }

 private:
  PlantParams params_;
  AssistGains gains_;
  double speed_integral_ = 0.0;
};

struct DriverRefs {
  double speed_ref = 0.0;
  double steer_ref = 0.0;
};

// Scripted stand-in for the joystick operator: follows the centerline at a
// fixed speed reference using curvature feedforward and offset feedback.
class ScriptedDriver {
 public:
  ScriptedDriver(const Track& track, const PlantParams& params, double speed_ref,
                 const AssistGains& gains = {})
      : track_(&track), params_(params), gains_(gains), speed_ref_(speed_ref) {}

  DriverRefs operator()(const EstimatedState& est) const;

 private:
  const Track* track_;
  PlantParams params_;
  AssistGains gains_;
  double speed_ref_;
};

struct Transition {
  EstimatedState est_state;
  Action action;
  EstimatedState next_est_state;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

// One logged control step: the estimate the actor saw, what it commanded,
// the reward that followed and the episode flags.
struct TrajectoryStep {
  EstimatedState est_state;
  Action action;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;

  friend bool operator==(const TrajectoryStep&, const TrajectoryStep&) = default;
};

struct Trajectory {
  std::uint64_t id = 0;
  std::vector<TrajectoryStep> steps;

  double sim_seconds(double dt) const { return dt * static_cast<double>(steps.size()); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct EpisodeResult {
  int steps = 0;
  int laps = 0;
  double progress = 0.0;  // cumulative signed arc length, m
  double mean_speed = 0.0;
  double peak_speed = 0.0;
  double mean_abs_d = 0.0;
  bool crashed = false;
  bool off_track = false;
  bool truncated = false;
};

struct StepInfo {
  int step = 0;
  const PlantState* plant = nullptr;
  const EstimatedState* est = nullptr;
  TrackFrame frame;
  Action action;
  double reward_to_date = 0.0;
  int laps = 0;
};

using Actor = std::function<Action(const EstimatedState&)>;
using StepCallback = std::function<void(const StepInfo&)>;

PlantState sample_initial_state(const Track& track, Rng& rng);

std::pair<Trajectory, EpisodeResult> run_episode(const Actor& actor, const Track& track,
                                                 const PlantParams& params, int max_steps,
                                                 Rng& rng, const StepCallback& on_step = {});
std::pair<Trajectory, EpisodeResult> run_episode_from(const PlantState& initial,
                                                      const Actor& actor, const Track& track,
                                                      const PlantParams& params, int max_steps,
                                                      Rng& rng, const StepCallback& on_step = {});

}  // namespace dynarace
