#include "dbot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dbot {

std::optional<double> ray_rect_distance(Vec2 o, double angle, const Rect& r) {
  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();

  auto slab = [&](double origin, double dir, double lo, double hi) {
    if (std::abs(dir) < 1e-15) {
      if (origin < lo || origin > hi) {
        t0 = std::numeric_limits<double>::infinity();
      }
      return;
    }
    double a = (lo - origin) / dir;
    double b = (hi - origin) / dir;
    if (a > b) std::swap(a, b);
    t0 = std::max(t0, a);
    t1 = std::min(t1, b);
  };
  slab(o.x, dx, r.xmin, r.xmax);
  slab(o.y, dy, r.ymin, r.ymax);

  if (t0 > t1 || t1 <= 0.0) return std::nullopt;
  if (t0 > 0.0) return t0;
  return t1;  // origin inside
}

std::array<Vec2, 4> footprint_corners(const Pose2D& pose, double length, double width) {
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  const double hl = length / 2.0;
  const double hw = width / 2.0;
  auto at = [&](double lx, double ly) {
    return Vec2{pose.x + c * lx - s * ly, pose.y + s * lx + c * ly};
  };
  return {at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)};
}

bool footprint_overlaps(const Pose2D& pose, double length, double width, const Rect& r) {
  const auto corners = footprint_corners(pose, length, width);
  const std::array<Vec2, 4> box = {Vec2{r.xmin, r.ymin}, Vec2{r.xmax, r.ymin},
                                   Vec2{r.xmax, r.ymax}, Vec2{r.xmin, r.ymax}};
  const double c = std::cos(pose.theta);
  const double s = std::sin(pose.theta);
  const std::array<Vec2, 4> axes = {Vec2{1, 0}, Vec2{0, 1}, Vec2{c, s}, Vec2{-s, c}};
  for (const Vec2& ax : axes) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin;
    double bmin = amin, bmax = -amin;
    for (const Vec2& p : corners) {
      const double d = p.x * ax.x + p.y * ax.y;
      amin = std::min(amin, d);
      amax = std::max(amax, d);
    }
    for (const Vec2& p : box) {
      const double d = p.x * ax.x + p.y * ax.y;
      bmin = std::min(bmin, d);
      bmax = std::max(bmax, d);
    }
    if (amax <= bmin || bmax <= amin) return false;
  }
  return true;
}

double point_segment_distance_sq(Vec2 p, Vec2 a, Vec2 b, double* t_out) {
  const double vx = b.x - a.x;
  const double vy = b.y - a.y;
  const double len2 = vx * vx + vy * vy;
  double t = 0.0;
  if (len2 > 0.0) t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / len2, 0.0, 1.0);
  if (t_out) *t_out = t;
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return dx * dx + dy * dy;
}

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b, double* t_out) {
  return std::sqrt(point_segment_distance_sq(p, a, b, t_out));
}

}  // namespace dbot
