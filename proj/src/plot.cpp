#include "dynarace/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace dynarace {

namespace {

struct Bounds {
  double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
  void add(double x, double y) {
    x0 = std::min(x0, x);
    y0 = std::min(y0, y);
    x1 = std::max(x1, x);
    y1 = std::max(y1, y);
  }
};

std::string fmt(const char* f, double a, double b) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

// Centerline shifted sideways by `offset` along the left normal.
std::vector<Vec2> offset_line(const Track& track, double offset) {
  std::vector<Vec2> out;
  const double ds = track.spacing();
  for (std::size_t i = 0; i < track.size(); ++i) {
    const double s = ds * static_cast<double>(i);
    const Vec2 p = track.point_at(s);
    const double h = track.heading_at(s);
    out.push_back({p.x - offset * std::sin(h), p.y + offset * std::cos(h)});
  }
  return out;
}

}  // namespace

std::string trajectory_svg(const Track& track, const Trajectory& traj, double px_per_m) {
  const double w = track.half_width();
  const std::vector<std::vector<Vec2>> lines{offset_line(track, 0.0), offset_line(track, w),
                                             offset_line(track, -w)};
  Bounds b;
  for (const auto& line : lines)
    for (const Vec2& p : line) b.add(p.x, p.y);
  for (const auto& st : traj.steps) b.add(st.est_state.x(), st.est_state.y());
  const double margin = 0.1;
  b.x0 -= margin;
  b.y0 -= margin;
  b.x1 += margin;
  b.y1 += margin;
  // SVG y grows downward; flip so the plot reads like the world frame.
  const auto pt = [&](double x, double y) { return fmt("%.1f,%.1f ", (x - b.x0) * px_per_m, (b.y1 - y) * px_per_m); };

  std::string svg;
  svg += fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%.0f\" height=\"%.0f\">\n",
             (b.x1 - b.x0) * px_per_m, (b.y1 - b.y0) * px_per_m);
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const char* styles[] = {"stroke=\"#999\" stroke-dasharray=\"6,4\"", "stroke=\"black\"", "stroke=\"black\""};
  for (std::size_t k = 0; k < lines.size(); ++k) {
    svg += "<polygon fill=\"none\" ";
    svg += styles[k];
    svg += " points=\"";
    for (const Vec2& p : lines[k]) svg += pt(p.x, p.y);
    svg += "\"/>\n";
  }
  if (!traj.steps.empty()) {
    svg += "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"";
    for (const auto& st : traj.steps) svg += pt(st.est_state.x(), st.est_state.y());
    svg += "\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

std::string trajectory_csv(const Track& track, const Trajectory& traj, double dt) {
  std::string csv = "step,t,x,y,speed,s,d\n";
  char buf[192];
  for (std::size_t i = 0; i < traj.steps.size(); ++i) {
    const EstimatedState& e = traj.steps[i].est_state;
    const TrackFrame f = track.project(e.pose());
    std::snprintf(buf, sizeof buf, "%zu,%.3f,%.6f,%.6f,%.6f,%.6f,%.6f\n", i, dt * static_cast<double>(i), e.x(),
                  e.y(), e.speed(), f.s, f.d);
    csv += buf;
  }
  return csv;
}

}  // namespace dynarace
