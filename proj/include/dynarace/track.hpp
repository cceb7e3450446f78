#pragma once

#include <filesystem>
#include <span>
#include <vector>

namespace dynarace {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double yaw = 0.0;
};

// Position relative to the centerline. d > 0 is left of the direction of
// increasing s.
struct TrackFrame {
  double s = 0.0;
  double d = 0.0;
  double heading_err = 0.0;
};

// Body-frame polar coordinates of a track point.
struct PolarPoint {
  double range = 0.0;
  double bearing = 0.0;
};

double wrap_angle(double a);  // into (-pi, pi]

// Closed centerline resampled so that every chord (including the closing
// one) has the same length. Immutable once built.
class Track {
 public:
  const std::vector<Vec2>& centerline() const { return points_; }
  double length() const { return length_; }
  double half_width() const { return half_width_; }
  double spacing() const { return spacing_; }  // realized chord length
  double requested_spacing() const { return requested_spacing_; }
  std::size_t size() const { return points_.size(); }

  Vec2 point_at(double s) const;
  double heading_at(double s) const;  // tangent direction of the segment containing s
  double curvature_at(double s, double window = 0.1) const;

  TrackFrame project(Vec2 p) const;
  TrackFrame project(const Pose& pose) const;

  double wrap_s(double s) const;

 private:
  friend Track build_track(std::span<const Vec2>, double, double);

  std::vector<Vec2> points_;
  std::vector<double> seg_heading_;
  double length_ = 0.0;
  double half_width_ = 0.0;
  double spacing_ = 0.0;
  double requested_spacing_ = 0.0;
};

Track build_track(std::span<const Vec2> waypoints, double half_width, double spacing);

// Points at arc-lengths s* + k * lookahead_spacing (k = 1..n) in the robot frame.
std::vector<PolarPoint> observe(const Track& track, const Pose& pose, int n,
                                double lookahead_spacing);
void observe_into(const Track& track, const Pose& pose, double s_star, int n,
                  double lookahead_spacing, std::span<PolarPoint> out);

// Signed wrap-aware arc-length difference in (-L/2, L/2].
double progress(const Track& track, double s_prev, double s_curr);

bool is_off_track(const Track& track, const TrackFrame& frame);

// Rounded-rectangle tabletop arena: 1.8 m x 1.2 m centerline extent.
std::vector<Vec2> rounded_rectangle(double width, double height, double corner_radius,
                                    int arc_segments = 18);
Track default_arena();

void save_track(const Track& track, const std::filesystem::path& path);
Track load_track(const std::filesystem::path& path);

}  // namespace dynarace
