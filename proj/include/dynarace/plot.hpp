#pragma once

#include <string>

#include "dynarace/plant.hpp"
#include "dynarace/track.hpp"

namespace dynarace {

// Track outline (centerline and both edges) with the estimated position trace
// drawn over it, in metres scaled to pixels.
std::string trajectory_svg(const Track& track, const Trajectory& traj, double px_per_m = 300.0);

// One row per step: step,t,x,y,speed,s,d.
std::string trajectory_csv(const Track& track, const Trajectory& traj, double dt);

}  // namespace dynarace
