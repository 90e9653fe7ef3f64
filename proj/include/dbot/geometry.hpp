#pragma once

#include <array>
#include <optional>

#include "dbot/kinematics.hpp"

namespace dbot {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Axis-aligned rectangle.
struct Rect {
  double xmin = 0.0;
  double ymin = 0.0;
  double xmax = 0.0;
  double ymax = 0.0;

  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  bool contains(Vec2 p) const { return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax; }
  bool contains(const Rect& o) const {
    return o.xmin >= xmin && o.xmax <= xmax && o.ymin >= ymin && o.ymax <= ymax;
  }
  bool overlaps(const Rect& o) const {
    return xmin < o.xmax && o.xmin < xmax && ymin < o.ymax && o.ymin < ymax;
  }
  static Rect centered(Vec2 c, double w, double h) {
    return {c.x - w / 2.0, c.y - h / 2.0, c.x + w / 2.0, c.y + h / 2.0};
  }
};

// Distance along the ray origin + s*(cos a, sin a) to the first boundary
// crossing of r, for s > 0. A ray starting inside r hits at its exit face.
std::optional<double> ray_rect_distance(Vec2 origin, double angle, const Rect& r);

// Corners of a length x width rectangle centred at pose, counterclockwise.
std::array<Vec2, 4> footprint_corners(const Pose2D& pose, double length, double width);

// Separating-axis overlap test between an oriented footprint and an AABB.
// Touching edges do not count as overlap.
bool footprint_overlaps(const Pose2D& pose, double length, double width, const Rect& r);

double point_segment_distance(Vec2 p, Vec2 a, Vec2 b, double* t_out = nullptr);
double point_segment_distance_sq(Vec2 p, Vec2 a, Vec2 b, double* t_out = nullptr);

}  // namespace dbot
