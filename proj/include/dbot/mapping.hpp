#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dbot/geometry.hpp"
#include "dbot/kinematics.hpp"
#include "dbot/plant.hpp"

namespace dbot {

struct CellIndex {
  int ix = 0;
  int iy = 0;
  friend bool operator==(CellIndex, CellIndex) = default;
};

struct GridGeometry {
  Vec2 origin;  // world position of the (0,0) cell's lower-left corner
  double resolution = 0.05;
  int width = 0;
  int height = 0;

  static GridGeometry covering(const Rect& bounds, double resolution);

  bool in_bounds(CellIndex c) const { return c.ix >= 0 && c.iy >= 0 && c.ix < width && c.iy < height; }
  std::size_t index(CellIndex c) const {
    return static_cast<std::size_t>(c.iy) * static_cast<std::size_t>(width) + static_cast<std::size_t>(c.ix);
  }
  std::size_t size() const { return static_cast<std::size_t>(width) * static_cast<std::size_t>(height); }
  CellIndex cell_of(Vec2 p) const;  // may be out of bounds
  Vec2 center(CellIndex c) const;
  Rect cell_rect(CellIndex c) const;
};

struct OccupancyGrid {
  GridGeometry geom;
  std::vector<double> log_odds;
  double l_occ = 0.85;
  double l_free = -0.40;
  double l_max = 10.0;
  double occ_threshold = 2.0;
  // Bumped whenever any cell crosses occ_threshold in either direction.
  std::uint64_t lethal_version = 0;

  static OccupancyGrid make(const GridGeometry& g);

  double at(CellIndex c) const { return log_odds[geom.index(c)]; }
  bool occupied(CellIndex c) const { return at(c) > occ_threshold; }
  bool free(CellIndex c) const { return at(c) < -occ_threshold; }
};

// Bresenham cells from a (inclusive) to b (exclusive); cells past the grid
// boundary are dropped and the walk stops on leaving the grid.
std::vector<CellIndex> trace_cells(const GridGeometry& g, CellIndex a, CellIndex b);

// Log-odds inverse sensor model. ignore_endpoint[k] marks beam k as hitting a
// tracked dynamic object: its traversal is still carved but no occupied
// evidence is added.
void update_grid(OccupancyGrid& g, const Pose2D& pose, std::span<const double> ranges,
                 const LidarParams& lidar, std::span<const std::uint8_t> ignore_endpoint = {});

inline constexpr std::uint8_t kLethalCost = 255;
inline constexpr std::uint8_t kMaxInflatedCost = 254;

struct Costmap {
  GridGeometry geom;
  std::vector<std::uint8_t> cost;
  double inflation_radius = 0.37;

  std::uint8_t at(CellIndex c) const { return cost[geom.index(c)]; }
  bool lethal(CellIndex c) const { return at(c) == kLethalCost; }
  // Lethal for out-of-grid cells.
  bool lethal_at(Vec2 p) const;
  // Normalised cost in [0, 1] for non-lethal cells; lethal returns 1.
  double normalized(CellIndex c) const;
};

// Cost of a non-lethal cell at distance d (m) from the nearest lethal cell's
// square; zero at or beyond radius.
std::uint8_t inflation_cost(double d, double radius);

Costmap inflate(const OccupancyGrid& g, double inflation_radius = 0.37);

// Ternary run-length snapshot for telemetry: 'f' free, 'u' unknown, 'o'
// occupied, each run written as <letter><count>, row-major from cell (0,0).
struct GridSnapshot {
  std::uint64_t id = 0;
  GridGeometry geom;
  std::string rle;
};

GridSnapshot snapshot(const OccupancyGrid& g, std::uint64_t id);
// Inverse of the rle encoding; returns one char per cell.
std::string decode_rle(const std::string& rle);

}  // namespace dbot
