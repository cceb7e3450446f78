#include "dynarace/track.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "dynarace/error.hpp"

namespace dynarace {

namespace {

constexpr double kPi = std::numbers::pi;

double dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Arc-length walker over a closed polyline. Each step moves to the first
// point further along the polyline at Euclidean distance h from the current.
class PolylineWalker {
 public:
  explicit PolylineWalker(std::span<const Vec2> pts) : pts_(pts.begin(), pts.end()) {
    cum_.push_back(0.0);
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      seg_len_.push_back(dist(pts_[i], pts_[(i + 1) % pts_.size()]));
      cum_.push_back(cum_.back() + seg_len_.back());
    }
  }

  double length() const { return cum_.back(); }

  struct Cursor {
    std::size_t seg = 0;
    double t = 0.0;
    long laps = 0;
    Vec2 p;
  };

  Cursor start() const { return Cursor{0, 0.0, 0, pts_[0]}; }

  double arc(const Cursor& c) const {
    return static_cast<double>(c.laps) * length() + cum_[c.seg] + c.t * seg_len_[c.seg];
  }

  Cursor step(const Cursor& from, double h) const {
    const std::size_t m = pts_.size();
    std::size_t k = from.seg;
    long laps = from.laps;
    double t_min = from.t;
    for (std::size_t guard = 0; guard < 2 * m + 2; ++guard) {
      const Vec2 a = pts_[k];
      const Vec2 b = pts_[(k + 1) % m];
      const double ex = b.x - a.x, ey = b.y - a.y;
      const double fx = a.x - from.p.x, fy = a.y - from.p.y;
      const double qa = ex * ex + ey * ey;
      const double qb = 2.0 * (fx * ex + fy * ey);
      const double qc = fx * fx + fy * fy - h * h;
      const double disc = qb * qb - 4.0 * qa * qc;
      if (disc >= 0.0) {
        const double tau = (-qb + std::sqrt(disc)) / (2.0 * qa);
        if (tau >= t_min && tau <= 1.0) {
          return Cursor{k, tau, laps, Vec2{a.x + tau * ex, a.y + tau * ey}};
        }
      }
      k = (k + 1) % m;
      if (k == 0) ++laps;
      t_min = 0.0;
    }
    // Step longer than the whole loop; park at the start of the next lap.
    return Cursor{0, 0.0, from.laps + 1, pts_[0]};
  }

  double arc_after(std::size_t n, double h) const {
    Cursor c = start();
    for (std::size_t i = 0; i < n; ++i) c = step(c, h);
    return arc(c);
  }

 private:
  std::vector<Vec2> pts_;
  std::vector<double> seg_len_;
  std::vector<double> cum_;
};

}  // namespace

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a <= 0.0) a += 2.0 * kPi;
  return a - kPi;
}

Track build_track(std::span<const Vec2> waypoints, double half_width, double spacing) {
  if (waypoints.size() < 3) {
    throw Error(ErrorCode::kTooFewWaypoints, "need at least 3 waypoints, got " +
                                                 std::to_string(waypoints.size()));
  }
  if (!(spacing > 0.0)) throw Error(ErrorCode::kNonPositiveSpacing, "spacing must be > 0");
  if (!(half_width > 0.0)) throw Error(ErrorCode::kBadFormat, "half_width must be > 0");
  for (std::size_t i = 0; i < waypoints.size(); ++i) {
    const Vec2 a = waypoints[i];
    const Vec2 b = waypoints[(i + 1) % waypoints.size()];
    if (!std::isfinite(a.x) || !std::isfinite(a.y)) {
      throw Error(ErrorCode::kBadFormat, "non-finite waypoint");
    }
    if (dist(a, b) <= 1e-12) {
      throw Error(ErrorCode::kDuplicateWaypoint, "waypoints " + std::to_string(i) + " and " +
                                                     std::to_string((i + 1) % waypoints.size()) +
                                                     " coincide");
    }
  }

  const PolylineWalker walker(waypoints);
  const double l0 = walker.length();
  const std::size_t n = std::max<std::size_t>(3, static_cast<std::size_t>(std::llround(l0 / spacing)));

  // Find the chord length h whose n-step walk closes the loop exactly.
  double lo = 0.25 * l0 / static_cast<double>(n);
  double hi = l0 / static_cast<double>(n);
  while (walker.arc_after(n, lo) >= l0) lo *= 0.5;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (walker.arc_after(n, mid) < l0) lo = mid; else hi = mid;
  }
  const double h = 0.5 * (lo + hi);

  Track track;
  track.points_.reserve(n);
  auto cur = walker.start();
  for (std::size_t i = 0; i < n; ++i) {
    track.points_.push_back(cur.p);
    cur = walker.step(cur, h);
  }
  track.length_ = 0.0;
  track.seg_heading_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = track.points_[i];
    const Vec2 b = track.points_[(i + 1) % n];
    track.length_ += dist(a, b);
    track.seg_heading_[i] = std::atan2(b.y - a.y, b.x - a.x);
  }
  track.spacing_ = track.length_ / static_cast<double>(n);
  track.half_width_ = half_width;
  track.requested_spacing_ = spacing;
  return track;
}

double Track::wrap_s(double s) const {
  double w = std::fmod(s, length_);
  if (w < 0.0) w += length_;
  if (w >= length_) w = 0.0;
  return w;
}

Vec2 Track::point_at(double s) const {
  const double w = wrap_s(s);
  const std::size_t n = points_.size();
  std::size_t i = std::min(static_cast<std::size_t>(w / spacing_), n - 1);
  const double t = (w - static_cast<double>(i) * spacing_) / spacing_;
  const Vec2 a = points_[i];
  const Vec2 b = points_[(i + 1) % n];
  return Vec2{a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

double Track::heading_at(double s) const {
  const double w = wrap_s(s);
  const std::size_t i = std::min(static_cast<std::size_t>(w / spacing_), points_.size() - 1);
  return seg_heading_[i];
}

double Track::curvature_at(double s, double window) const {
  const double h1 = heading_at(s + 0.5 * window);
  const double h0 = heading_at(s - 0.5 * window);
  return wrap_angle(h1 - h0) / window;
}

TrackFrame Track::project(Vec2 p) const {
  const std::size_t n = points_.size();
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_i = 0;
  double best_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 a = points_[i];
    const Vec2 b = points_[(i + 1) % n];
    const double ex = b.x - a.x, ey = b.y - a.y;
    const double px = p.x - a.x, py = p.y - a.y;
    double t = (px * ex + py * ey) / (ex * ex + ey * ey);
    t = std::clamp(t, 0.0, 1.0);
    const double qx = px - t * ex, qy = py - t * ey;
    const double d2 = qx * qx + qy * qy;
    if (d2 < best) {
      best = d2;
      best_i = i;
      best_t = t;
    }
  }
  const Vec2 a = points_[best_i];
  const Vec2 b = points_[(best_i + 1) % n];
  const double ex = b.x - a.x, ey = b.y - a.y;
  const double px = p.x - a.x, py = p.y - a.y;
  const double cross = ex * py - ey * px;
  TrackFrame f;
  f.s = wrap_s((static_cast<double>(best_i) + best_t) * spacing_);
  f.d = cross >= 0.0 ? std::sqrt(best) : -std::sqrt(best);
  return f;
}

TrackFrame Track::project(const Pose& pose) const {
  TrackFrame f = project(Vec2{pose.x, pose.y});
  f.heading_err = wrap_angle(pose.yaw - heading_at(f.s));
  return f;
}

void observe_into(const Track& track, const Pose& pose, double s_star, int n,
                  double lookahead_spacing, std::span<PolarPoint> out) {
  const double c = std::cos(pose.yaw), s = std::sin(pose.yaw);
  for (int k = 1; k <= n; ++k) {
    const Vec2 q = track.point_at(s_star + k * lookahead_spacing);
    const double dx = q.x - pose.x, dy = q.y - pose.y;
    const double bx = c * dx + s * dy;
    const double by = -s * dx + c * dy;
    out[k - 1] = PolarPoint{std::hypot(bx, by), wrap_angle(std::atan2(by, bx))};
  }
}

std::vector<PolarPoint> observe(const Track& track, const Pose& pose, int n,
                                double lookahead_spacing) {
  std::vector<PolarPoint> out(static_cast<std::size_t>(std::max(n, 0)));
  if (n < 1 || !(lookahead_spacing > 0.0)) return out;
  const double s_star = track.project(Vec2{pose.x, pose.y}).s;
  observe_into(track, pose, s_star, n, lookahead_spacing, out);
  return out;
}

double progress(const Track& track, double s_prev, double s_curr) {
  const double l = track.length();
  if (!(s_prev >= 0.0 && s_prev < l) || !(s_curr >= 0.0 && s_curr < l)) {
    throw Error(ErrorCode::kOutOfRangeArcLength, "arc length outside [0, L)");
  }
  double d = std::fmod(s_curr - s_prev + 0.5 * l, l);
  if (d < 0.0) d += l;
  d -= 0.5 * l;
  if (d <= -0.5 * l) d = 0.5 * l;
  return d;
}

bool is_off_track(const Track& track, const TrackFrame& frame) {
  return std::abs(frame.d) > track.half_width();
}

std::vector<Vec2> rounded_rectangle(double width, double height, double r, int arc_segments) {
  const double hx = 0.5 * width - r;
  const double hy = 0.5 * height - r;
  // Counter-clockwise, starting at the middle of the bottom straight.
  std::vector<Vec2> wp;
  wp.push_back({0.0, -0.5 * height});
  const Vec2 centers[4] = {{hx, -hy}, {hx, hy}, {-hx, hy}, {-hx, -hy}};
  for (int c = 0; c < 4; ++c) {
    const double a0 = -0.5 * kPi + c * 0.5 * kPi;
    for (int j = 0; j <= arc_segments; ++j) {
      const double a = a0 + 0.5 * kPi * j / arc_segments;
      wp.push_back({centers[c].x + r * std::cos(a), centers[c].y + r * std::sin(a)});
    }
  }
  // Drop consecutive duplicates (zero-length straights).
  std::vector<Vec2> out;
  for (const Vec2& p : wp) {
    if (out.empty() || dist(out.back(), p) > 1e-9) out.push_back(p);
  }
  while (out.size() > 1 && dist(out.front(), out.back()) <= 1e-9) out.pop_back();
  return out;
}

Track default_arena() {
  const auto wp = rounded_rectangle(1.8, 1.2, 0.35);
  return build_track(wp, 0.08, 0.01);
}

void save_track(const Track& track, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kStorageFailure, "cannot write " + path.string());
  out << std::setprecision(17);
  out << "track v1 " << track.half_width() << ' ' << track.requested_spacing() << '\n';
  for (const Vec2& p : track.centerline()) out << p.x << ' ' << p.y << '\n';
  if (!out) throw Error(ErrorCode::kStorageFailure, "short write to " + path.string());
}

Track load_track(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kBadFormat, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kBadFormat, "empty track file");
  std::istringstream header(line);
  std::string magic, version;
  double half_width = 0.0, spacing = 0.0;
  if (!(header >> magic >> version >> half_width >> spacing) || magic != "track" ||
      version != "v1") {
    throw Error(ErrorCode::kBadFormat, "expected header 'track v1 <half_width> <spacing>'");
  }
  std::vector<Vec2> pts;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream row(line);
    Vec2 p;
    if (!(row >> p.x >> p.y)) {
      throw Error(ErrorCode::kBadFormat, "bad point on line " + std::to_string(lineno));
    }
    pts.push_back(p);
  }
  return build_track(pts, half_width, spacing);
}

}  // namespace dynarace
