#include "dynarace/observation.hpp"

#include <array>

namespace dynarace {

TrackFrame make_observation(const Track& track, const EstimatedState& est,
                            double lookahead_spacing, std::span<float> out) {
  const Pose pose = est.pose();
  const TrackFrame frame = track.project(pose);
  for (int i = 0; i < kStateDim; ++i) out[static_cast<std::size_t>(i)] = static_cast<float>(est[i]);
  out[kYaw] = static_cast<float>(wrap_angle(est.yaw()));
  std::array<PolarPoint, kTrackPoints> pts;
  observe_into(track, pose, frame.s, kTrackPoints, lookahead_spacing, pts);
  for (int k = 0; k < kTrackPoints; ++k) {
    out[static_cast<std::size_t>(kStateDim + 2 * k)] = static_cast<float>(pts[static_cast<std::size_t>(k)].range);
    out[static_cast<std::size_t>(kStateDim + 2 * k + 1)] = static_cast<float>(pts[static_cast<std::size_t>(k)].bearing);
  }
  return frame;
}

std::vector<float> make_observation(const Track& track, const EstimatedState& est,
                                    double lookahead_spacing) {
  std::vector<float> out(kObsDim);
  make_observation(track, est, lookahead_spacing, out);
  return out;
}

EstimatedState state_from_observation(std::span<const float> obs) {
  EstimatedState e;
  for (int i = 0; i < kStateDim; ++i) e[i] = obs[static_cast<std::size_t>(i)];
  return e;
}

}  // namespace dynarace
