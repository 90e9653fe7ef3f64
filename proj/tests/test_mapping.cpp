#include <doctest.h>

#include <cmath>
#include <random>

#include "dbot/mapping.hpp"

using namespace dbot;

namespace {

GridGeometry small_grid() { return GridGeometry::covering({0, 0, 5, 5}, 0.1); }

bool adjacent8(CellIndex a, CellIndex b) {
  return std::abs(a.ix - b.ix) <= 1 && std::abs(a.iy - b.iy) <= 1 && !(a == b);
}

}  // namespace

TEST_CASE("grid geometry") {
  const auto g = GridGeometry::covering({-1, 2, 3.05, 4}, 0.05);
  CHECK(g.width == 81);
  CHECK(g.height == 40);
  CHECK(g.cell_of({-1.0, 2.0}) == CellIndex{0, 0});
  CHECK(g.cell_of({-0.999, 2.049}) == CellIndex{0, 0});
  CHECK(g.cell_of({-1.01, 2.0}).ix == -1);
  CHECK(g.center({2, 3}).x == doctest::Approx(-0.875));
  CHECK(g.center({2, 3}).y == doctest::Approx(2.175));
  CHECK_THROWS_AS(GridGeometry::covering({0, 0, 1, 1}, 0.0), ParameterError);
}

TEST_CASE("bresenham traces") {
  const auto g = small_grid();
  const auto h = trace_cells(g, {2, 3}, {7, 3});
  REQUIRE(h.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(h[i] == CellIndex{2 + i, 3});
  CHECK(trace_cells(g, {4, 4}, {4, 4}).empty());

  const auto d = trace_cells(g, {0, 0}, {4, 4});
  REQUIRE(d.size() == 4);
  CHECK(d[3] == CellIndex{3, 3});

  std::mt19937 gen(5);
  std::uniform_int_distribution<int> u(0, 49);
  for (int i = 0; i < 500; ++i) {
    const CellIndex a{u(gen), u(gen)}, b{u(gen), u(gen)};
    const auto cells = trace_cells(g, a, b);
    const int expect = std::max(std::abs(a.ix - b.ix), std::abs(a.iy - b.iy));
    REQUIRE(static_cast<int>(cells.size()) == expect);
    if (!cells.empty()) {
      CHECK(cells.front() == a);
      CHECK(adjacent8(cells.back(), b));
    }
    for (std::size_t k = 1; k < cells.size(); ++k) CHECK(adjacent8(cells[k - 1], cells[k]));
  }
  // leaving the grid ends the walk
  const auto out = trace_cells(g, {48, 10}, {60, 10});
  CHECK(out.size() == 2);
}

TEST_CASE("inverse sensor model on one beam") {
  auto grid = OccupancyGrid::make(small_grid());
  LidarParams lidar;
  lidar.n_beams = 1;
  lidar.fov = 0.0;
  lidar.max_range = 3.0;
  const double r[] = {1.0};
  update_grid(grid, {1.05, 1.05, 0.0}, r, lidar);
  CHECK(grid.at({20, 10}) == doctest::Approx(0.85));
  for (int ix = 10; ix < 20; ++ix) CHECK(grid.at({ix, 10}) == doctest::Approx(-0.40));
  CHECK(grid.at({21, 10}) == 0.0);

  for (int i = 0; i < 100; ++i) update_grid(grid, {1.05, 1.05, 0.0}, r, lidar);
  CHECK(grid.at({20, 10}) == doctest::Approx(10.0));
  CHECK(grid.at({10, 10}) == doctest::Approx(-10.0));
  CHECK(grid.occupied({20, 10}));
  CHECK(grid.free({15, 10}));

  // max-range return carves but adds no hit
  auto g2 = OccupancyGrid::make(small_grid());
  const double miss[] = {3.0};
  update_grid(g2, {1.05, 1.05, 0.0}, miss, lidar);
  CHECK(g2.at({40, 10}) == 0.0);
  CHECK(g2.at({39, 10}) == doctest::Approx(-0.40));

  // masked endpoint
  auto g3 = OccupancyGrid::make(small_grid());
  const std::uint8_t mask[] = {1};
  update_grid(g3, {1.05, 1.05, 0.0}, r, lidar, mask);
  CHECK(g3.at({20, 10}) == 0.0);
  CHECK(g3.at({19, 10}) == doctest::Approx(-0.40));

  CHECK_THROWS(update_grid(g3, {-1, 1, 0}, r, lidar));
}

TEST_CASE("lethal version tracks threshold crossings") {
  auto grid = OccupancyGrid::make(small_grid());
  LidarParams lidar;
  lidar.n_beams = 1;
  lidar.fov = 0.0;
  const double r[] = {1.0};
  update_grid(grid, {1.05, 1.05, 0.0}, r, lidar);
  update_grid(grid, {1.05, 1.05, 0.0}, r, lidar);
  CHECK(grid.lethal_version == 0);
  update_grid(grid, {1.05, 1.05, 0.0}, r, lidar);  // 2.55 > 2
  CHECK(grid.lethal_version == 1);
}

TEST_CASE("inflation cost curve") {
  CHECK(inflation_cost(0.0, 0.37) == 254);
  CHECK(inflation_cost(0.37, 0.37) == 0);
  CHECK(inflation_cost(1.0, 0.37) == 0);
  int prev = 255;
  for (double d = 0; d < 0.37; d += 0.001) {
    const int c = inflation_cost(d, 0.37);
    CHECK(c <= prev);
    CHECK(c >= 1);
    prev = c;
  }
}

TEST_CASE("inflate matches brute force") {
  std::mt19937 gen(2);
  const auto geom = GridGeometry::covering({0, 0, 2, 2}, 0.05);
  for (int trial = 0; trial < 5; ++trial) {
    auto grid = OccupancyGrid::make(geom);
    std::vector<CellIndex> lethal;
    for (int i = 0; i < 6; ++i) {
      const CellIndex c{static_cast<int>(gen() % 40), static_cast<int>(gen() % 40)};
      grid.log_odds[geom.index(c)] = 5.0;
      lethal.push_back(c);
    }
    const auto cm = inflate(grid, 0.37);
    for (int iy = 0; iy < 40; ++iy) {
      for (int ix = 0; ix < 40; ++ix) {
        const Vec2 p = geom.center({ix, iy});
        double best = 1e9;
        bool is_lethal = false;
        for (auto c : lethal) {
          if (c == CellIndex{ix, iy}) is_lethal = true;
          const Rect r = geom.cell_rect(c);
          const double ex = std::max({r.xmin - p.x, 0.0, p.x - r.xmax});
          const double ey = std::max({r.ymin - p.y, 0.0, p.y - r.ymax});
          best = std::min(best, std::hypot(ex, ey));
        }
        const std::uint8_t want = is_lethal ? kLethalCost : inflation_cost(best, 0.37);
        REQUIRE(cm.at({ix, iy}) == want);
      }
    }
  }
}

TEST_CASE("costmap helpers") {
  auto grid = OccupancyGrid::make(small_grid());
  grid.log_odds[grid.geom.index({5, 5})] = 3.0;
  const auto cm = inflate(grid);
  CHECK(cm.lethal_at(grid.geom.center({5, 5})));
  CHECK(cm.lethal_at({-0.1, 1.0}));
  CHECK_FALSE(cm.lethal_at({4.0, 4.0}));
  CHECK(cm.normalized({5, 5}) == 1.0);
  CHECK(cm.normalized({6, 5}) == doctest::Approx(cm.at({6, 5}) / 254.0));
}

TEST_CASE("snapshot rle round trip") {
  auto grid = OccupancyGrid::make(GridGeometry::covering({0, 0, 1, 0.3}, 0.1));
  grid.log_odds[0] = 3.0;
  grid.log_odds[1] = 3.0;
  grid.log_odds[2] = -3.0;
  grid.log_odds[29] = 2.5;
  const auto s = snapshot(grid, 7);
  CHECK(s.id == 7);
  CHECK(s.rle == "o2f1u26o1");
  const auto cells = decode_rle(s.rle);
  REQUIRE(cells.size() == 30);
  CHECK(cells.substr(0, 4) == "oofu");
  CHECK_THROWS(decode_rle("x3"));
  CHECK_THROWS(decode_rle("f"));
}

TEST_CASE("repeated scans recover a static obstacle") {
  World w;
  w.bounds = {0, 0, 6, 6};
  w.static_obstacles = {{3.0, 2.5, 3.5, 3.5}};
  auto grid = OccupancyGrid::make(GridGeometry::covering(w.bounds, 0.05));
  LidarParams lidar;
  RngStream rng(1, 3);
  for (int i = 0; i < 20; ++i) {
    const Pose2D p{1.0 + 0.05 * i, 3.0, 0.1 * i};
    update_grid(grid, p, lidar_scan(w, p, lidar, rng), lidar);
  }
  // front face seen, interior unknown, space in between free
  CHECK(grid.occupied(grid.geom.cell_of({3.01, 3.0})));
  CHECK(grid.at(grid.geom.cell_of({3.3, 3.0})) == 0.0);
  CHECK(grid.free(grid.geom.cell_of({2.5, 3.0})));
}
