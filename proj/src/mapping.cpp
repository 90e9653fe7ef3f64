#include "dbot/mapping.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dbot {

GridGeometry GridGeometry::covering(const Rect& bounds, double resolution) {
  if (!(resolution > 0.0)) throw ParameterError("grid resolution must be > 0");
  GridGeometry g;
  g.origin = {bounds.xmin, bounds.ymin};
  g.resolution = resolution;
  g.width = static_cast<int>(std::ceil(bounds.width() / resolution - 1e-9));
  g.height = static_cast<int>(std::ceil(bounds.height() / resolution - 1e-9));
  return g;
}

CellIndex GridGeometry::cell_of(Vec2 p) const {
  return {static_cast<int>(std::floor((p.x - origin.x) / resolution)),
          static_cast<int>(std::floor((p.y - origin.y) / resolution))};
}

Vec2 GridGeometry::center(CellIndex c) const {
  return {origin.x + (c.ix + 0.5) * resolution, origin.y + (c.iy + 0.5) * resolution};
}

Rect GridGeometry::cell_rect(CellIndex c) const {
  const double x0 = origin.x + c.ix * resolution;
  const double y0 = origin.y + c.iy * resolution;
  return {x0, y0, x0 + resolution, y0 + resolution};
}

OccupancyGrid OccupancyGrid::make(const GridGeometry& g) {
  OccupancyGrid grid;
  grid.geom = g;
  grid.log_odds.assign(g.size(), 0.0);
  return grid;
}

std::vector<CellIndex> trace_cells(const GridGeometry& g, CellIndex a, CellIndex b) {
  std::vector<CellIndex> out;
  int x = a.ix, y = a.iy;
  const int dx = std::abs(b.ix - a.ix), dy = -std::abs(b.iy - a.iy);
  const int sx = a.ix < b.ix ? 1 : -1, sy = a.iy < b.iy ? 1 : -1;
  int err = dx + dy;
  while (!(x == b.ix && y == b.iy)) {
    if (!g.in_bounds({x, y})) break;
    out.push_back({x, y});
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y += sy;
    }
  }
  return out;
}

namespace {

void add(OccupancyGrid& g, CellIndex c, double delta) {
  double& v = g.log_odds[g.geom.index(c)];
  const bool was = v > g.occ_threshold;
  v = std::clamp(v + delta, -g.l_max, g.l_max);
  if (was != (v > g.occ_threshold)) ++g.lethal_version;
}

}  // namespace

void update_grid(OccupancyGrid& g, const Pose2D& pose, std::span<const double> ranges,
                 const LidarParams& lidar, std::span<const std::uint8_t> ignore_endpoint) {
  const CellIndex start = g.geom.cell_of({pose.x, pose.y});
  if (!g.geom.in_bounds(start)) throw std::out_of_range("update_grid: pose outside grid");
  if (!ignore_endpoint.empty() && ignore_endpoint.size() != ranges.size()) {
    throw std::invalid_argument("update_grid: mask size mismatch");
  }
  for (std::size_t k = 0; k < ranges.size(); ++k) {
    const double r = ranges[k];
    const bool hit = r < lidar.max_range;
    const double a = pose.theta + lidar.beam_angle(static_cast<int>(k));
    const CellIndex end = g.geom.cell_of({pose.x + r * std::cos(a), pose.y + r * std::sin(a)});
    for (CellIndex c : trace_cells(g.geom, start, end)) add(g, c, g.l_free);
    const bool skip = !ignore_endpoint.empty() && ignore_endpoint[k] != 0;
    if (hit && !skip && g.geom.in_bounds(end)) add(g, end, g.l_occ);
  }
}

bool Costmap::lethal_at(Vec2 p) const {
  const CellIndex c = geom.cell_of(p);
  return !geom.in_bounds(c) || lethal(c);
}

double Costmap::normalized(CellIndex c) const {
  const std::uint8_t v = at(c);
  return v == kLethalCost ? 1.0 : static_cast<double>(v) / kMaxInflatedCost;
}

std::uint8_t inflation_cost(double d, double radius) {
  if (!(d < radius)) return 0;
  const double c = std::ceil(kMaxInflatedCost * (1.0 - d / radius));
  return static_cast<std::uint8_t>(std::clamp(c, 0.0, static_cast<double>(kMaxInflatedCost)));
}

Costmap inflate(const OccupancyGrid& g, double inflation_radius) {
  Costmap cm;
  cm.geom = g.geom;
  cm.inflation_radius = inflation_radius;
  cm.cost.assign(g.geom.size(), 0);

  // Kernel: distance from a cell centre to the lethal cell's square.
  const double res = g.geom.resolution;
  const int reach = static_cast<int>(std::ceil(inflation_radius / res)) + 1;
  struct Offset {
    int dx, dy;
    std::uint8_t cost;
  };
  std::vector<Offset> kernel;
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      if (dx == 0 && dy == 0) continue;
      const double ex = std::max(0.0, std::abs(dx) - 0.5) * res;
      const double ey = std::max(0.0, std::abs(dy) - 0.5) * res;
      const std::uint8_t c = inflation_cost(std::hypot(ex, ey), inflation_radius);
      if (c > 0) kernel.push_back({dx, dy, c});
    }
  }

  for (int iy = 0; iy < g.geom.height; ++iy) {
    for (int ix = 0; ix < g.geom.width; ++ix) {
      if (!g.occupied({ix, iy})) continue;
      cm.cost[g.geom.index({ix, iy})] = kLethalCost;
      for (const Offset& o : kernel) {
        const CellIndex n{ix + o.dx, iy + o.dy};
        if (!g.geom.in_bounds(n)) continue;
        std::uint8_t& v = cm.cost[g.geom.index(n)];
        if (v != kLethalCost) v = std::max(v, o.cost);
      }
    }
  }
  return cm;
}

GridSnapshot snapshot(const OccupancyGrid& g, std::uint64_t id) {
  GridSnapshot s;
  s.id = id;
  s.geom = g.geom;
  char run_char = 0;
  std::size_t run = 0;
  auto flush = [&] {
    if (run == 0) return;
    s.rle += run_char;
    s.rle += std::to_string(run);
  };
  for (std::size_t i = 0; i < g.log_odds.size(); ++i) {
    const double v = g.log_odds[i];
    const char c = v > g.occ_threshold ? 'o' : (v < -g.occ_threshold ? 'f' : 'u');
    if (c != run_char) {
      flush();
      run_char = c;
      run = 0;
    }
    ++run;
  }
  flush();
  return s;
}

std::string decode_rle(const std::string& rle) {
  std::string out;
  std::size_t i = 0;
  while (i < rle.size()) {
    const char c = rle[i++];
    if (c != 'f' && c != 'u' && c != 'o') throw std::invalid_argument("bad rle symbol");
    std::size_t n = 0;
    bool digits = false;
    while (i < rle.size() && rle[i] >= '0' && rle[i] <= '9') {
      n = n * 10 + static_cast<std::size_t>(rle[i++] - '0');
      digits = true;
    }
    if (!digits) throw std::invalid_argument("bad rle count");
    out.append(n, c);
  }
  return out;
}

}  // namespace dbot
