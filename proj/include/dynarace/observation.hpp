#pragma once

#include <span>
#include <vector>

#include "dynarace/plant.hpp"
#include "dynarace/track.hpp"

namespace dynarace {

inline constexpr int kTrackPoints = 30;
inline constexpr int kObsDim = kStateDim + 2 * kTrackPoints;  // 69

// Raw (unnormalized) policy observation: the estimated state with yaw wrapped
// into (-pi, pi], followed by (range, bearing) of the next kTrackPoints
// centerline points. Returns the track frame of the state as a by-product.
TrackFrame make_observation(const Track& track, const EstimatedState& est,
                            double lookahead_spacing, std::span<float> out);
std::vector<float> make_observation(const Track& track, const EstimatedState& est,
                                    double lookahead_spacing);

// Recovers the estimated state stored in an observation (yaw wrapped).
EstimatedState state_from_observation(std::span<const float> obs);

}  // namespace dynarace
