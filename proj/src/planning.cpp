#include "dbot/planning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <tuple>

namespace dbot {

CostUm step_cost_um(double resolution, bool diagonal) {
  return std::llround(resolution * (diagonal ? std::sqrt(2.0) : 1.0) * 1e6);
}

CostUm edge_cost_um(const Costmap& c, CellIndex to, bool diagonal, const AStarParams& p) {
  return step_cost_um(c.geom.resolution, diagonal) + std::llround(p.alpha * c.normalized(to) * 1e6);
}

CostUm heuristic_um(const GridGeometry& g, CellIndex a, CellIndex b) {
  const long dx = std::labs(a.ix - b.ix);
  const long dy = std::labs(a.iy - b.iy);
  const long lo = std::min(dx, dy), hi = std::max(dx, dy);
  const CostUm octile = (hi - lo) * step_cost_um(g.resolution, false) + lo * step_cost_um(g.resolution, true);
  const auto euclid = static_cast<CostUm>(std::floor(std::hypot(double(dx), double(dy)) * g.resolution * 1e6));
  return std::min(octile, euclid);
}

bool diagonal_blocked(const Costmap& c, CellIndex a, CellIndex b) {
  const CellIndex s1{b.ix, a.iy}, s2{a.ix, b.iy};
  return (c.geom.in_bounds(s1) && c.lethal(s1)) || (c.geom.in_bounds(s2) && c.lethal(s2));
}

PlannedPath astar_cells(const Costmap& c, CellIndex start, CellIndex goal, const AStarParams& p,
                        const AStarExpandHook& on_expand) {
  const GridGeometry& g = c.geom;
  if (!g.in_bounds(start) || c.lethal(start)) throw InvalidEndpointError("start cell is lethal or outside the map");
  if (!g.in_bounds(goal) || c.lethal(goal)) throw InvalidEndpointError("goal cell is lethal or outside the map");

  constexpr CostUm kInf = std::numeric_limits<CostUm>::max();
  std::vector<CostUm> gcost(g.size(), kInf);
  std::vector<std::int64_t> parent(g.size(), -1);
  using Entry = std::tuple<CostUm, CostUm, std::size_t>;  // f, h, index
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> open;

  const std::size_t s = g.index(start), t = g.index(goal);
  gcost[s] = 0;
  open.emplace(heuristic_um(g, start, goal), heuristic_um(g, start, goal), s);

  while (!open.empty()) {
    const auto [f, h, idx] = open.top();
    open.pop();
    if (f - h > gcost[idx]) continue;  // stale entry
    const CellIndex cur{static_cast<int>(idx % g.width), static_cast<int>(idx / g.width)};
    if (on_expand) on_expand(cur, gcost[idx], h);
    if (idx == t) break;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const CellIndex n{cur.ix + dx, cur.iy + dy};
        if (!g.in_bounds(n) || c.lethal(n)) continue;
        const bool diag = dx != 0 && dy != 0;
        if (diag && diagonal_blocked(c, cur, n)) continue;
        const CostUm ng = gcost[idx] + edge_cost_um(c, n, diag, p);
        const std::size_t ni = g.index(n);
        if (ng < gcost[ni]) {
          gcost[ni] = ng;
          parent[ni] = static_cast<std::int64_t>(idx);
          const CostUm nh = heuristic_um(g, n, goal);
          open.emplace(ng + nh, nh, ni);
        }
      }
    }
  }
  if (gcost[t] == kInf) throw NoPathError("goal unreachable");

  PlannedPath path;
  for (std::int64_t i = static_cast<std::int64_t>(t); i >= 0; i = parent[static_cast<std::size_t>(i)]) {
    const auto u = static_cast<std::size_t>(i);
    path.cells.push_back({static_cast<int>(u % g.width), static_cast<int>(u / g.width)});
    if (u == s) break;
  }
  std::reverse(path.cells.begin(), path.cells.end());
  for (CellIndex ci : path.cells) path.waypoints.push_back(g.center(ci));
  path.cost = static_cast<double>(gcost[t]) * 1e-6;
  return path;
}

PlannedPath astar(const Costmap& c, Vec2 start, Vec2 goal, const AStarParams& p, const AStarExpandHook& on_expand) {
  return astar_cells(c, c.geom.cell_of(start), c.geom.cell_of(goal), p, on_expand);
}

std::vector<TrackedObstacle> predict_tracks(const std::map<int, std::vector<Observation>>& history) {
  std::vector<TrackedObstacle> out;
  for (const auto& [id, obs] : history) {
    if (obs.empty()) continue;
    TrackedObstacle tr;
    tr.id = id;
    tr.center = obs.back().center;
    tr.footprint = obs.back().footprint;
    tr.history_length = static_cast<int>(obs.size());
    if (obs.size() >= 2) {
      const Observation& a = obs[obs.size() - 2];
      const Observation& b = obs.back();
      const double dt = b.t - a.t;
      if (dt > 0.0) tr.velocity = {(b.center.x - a.center.x) / dt, (b.center.y - a.center.y) / dt};
    }
    out.push_back(tr);
  }
  return out;
}

void TrackHistory::observe(int id, const Observation& o) {
  auto& h = hist_[id];
  if (!h.empty() && !(o.t > h.back().t)) return;
  h.push_back(o);
  if (h.size() > depth_) h.erase(h.begin());
}

void TrackHistory::prune(double now) {
  std::erase_if(hist_, [&](const auto& kv) { return kv.second.empty() || now - kv.second.back().t > stale_; });
}

std::vector<TrackedObstacle> TrackHistory::tracks() const { return predict_tracks(hist_); }

void MppiParams::validate() const {
  if (K < 1 || H < 1) throw ParameterError("MPPI needs K >= 1 and H >= 1");
  if (!(lambda > 0.0)) throw ParameterError("MPPI lambda must be > 0");
  if (!(dt > 0.0)) throw ParameterError("MPPI dt must be > 0");
  if (sigma_v < 0.0 || sigma_omega < 0.0) throw ParameterError("MPPI sigmas must be >= 0");
  if (w_obs < 0.0 || w_path < 0.0 || w_goal < 0.0 || w_ctrl < 0.0 || w_margin < 0.0) throw ParameterError("MPPI weights must be >= 0");
  if (!(v_min <= v_max) || !(omega_min <= omega_max)) throw ParameterError("MPPI bounds inverted");
  if (track_margin < 0.0 || static_margin < 0.0) throw ParameterError("MPPI margins must be >= 0");
  if (brake_rollouts < 0 || brake_rollouts > K) throw ParameterError("MPPI brake_rollouts must be in [0, K]");
}

std::vector<double> mppi_weights(std::span<const double> costs, double lambda) {
  std::vector<double> w(costs.size());
  if (costs.empty()) return w;
  const double lo = *std::min_element(costs.begin(), costs.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < costs.size(); ++i) {
    w[i] = std::exp(-(costs[i] - lo) / lambda);
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

std::vector<Vec2> simplify_path(std::span<const Vec2> pts, double tolerance) {
  if (pts.size() <= 2) return {pts.begin(), pts.end()};
  std::vector<char> keep(pts.size(), 0);
  keep.front() = keep.back() = 1;
  std::vector<std::pair<std::size_t, std::size_t>> stack{{0, pts.size() - 1}};
  while (!stack.empty()) {
    const auto [a, b] = stack.back();
    stack.pop_back();
    double worst = -1.0;
    std::size_t at = a;
    for (std::size_t i = a + 1; i < b; ++i) {
      const double d = point_segment_distance(pts[i], pts[a], pts[b]);
      if (d > worst) {
        worst = d;
        at = i;
      }
    }
    if (worst > tolerance) {
      keep[at] = 1;
      stack.push_back({a, at});
      stack.push_back({at, b});
    }
  }
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (keep[i]) out.push_back(pts[i]);
  }
  return out;
}

double distance_to_polyline(Vec2 p, std::span<const Vec2> poly) {
  if (poly.empty()) return 0.0;
  if (poly.size() == 1) return std::hypot(p.x - poly[0].x, p.y - poly[0].y);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    best = std::min(best, point_segment_distance_sq(p, poly[i], poly[i + 1]));
  }
  return std::sqrt(best);
}

namespace {

// Perimeter samples no further apart than `spacing`, plus the centre, in the
// body frame.
struct FootprintSamples {
  std::vector<Vec2> pts;
  FootprintSamples(double length, double width, double spacing) {
    const double hl = length / 2.0, hw = width / 2.0;
    pts.push_back({0.0, 0.0});
    const auto edge = [&](Vec2 a, Vec2 b) {
      const int n = std::max(1, static_cast<int>(std::ceil(std::hypot(b.x - a.x, b.y - a.y) / spacing)));
      for (int i = 0; i < n; ++i) {
        const double f = static_cast<double>(i) / n;
        pts.push_back({a.x + f * (b.x - a.x), a.y + f * (b.y - a.y)});
      }
    };
    edge({-hl, hw}, {hl, hw});
    edge({hl, hw}, {hl, -hw});
    edge({hl, -hw}, {-hl, -hw});
    edge({-hl, -hw}, {-hl, hw});
  }
};

// Summed-area table of lethal cells, so a box can be proven clear in O(1).
struct LethalTable {
  const GridGeometry& g;
  std::vector<int> sum;  // (width+1) x (height+1)
  explicit LethalTable(const Costmap& c) : g(c.geom), sum((g.width + 1) * (g.height + 1), 0) {
    const int W = g.width + 1;
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        sum[(y + 1) * W + x + 1] =
            (c.lethal({x, y}) ? 1 : 0) + sum[y * W + x + 1] + sum[(y + 1) * W + x] - sum[y * W + x];
      }
    }
  }
  // True when every cell touched by the disc bounding box around p is in the
  // grid and not lethal.
  bool clear(Vec2 p, double r) const {
    const CellIndex lo = g.cell_of({p.x - r, p.y - r}), hi = g.cell_of({p.x + r, p.y + r});
    if (!g.in_bounds(lo) || !g.in_bounds(hi)) return false;
    const int W = g.width + 1;
    return sum[(hi.iy + 1) * W + hi.ix + 1] - sum[lo.iy * W + hi.ix + 1] - sum[(hi.iy + 1) * W + lo.ix] +
               sum[lo.iy * W + lo.ix] ==
           0;
  }
};

bool footprint_hits_lethal(const Costmap& c, const Pose2D& pose, const FootprintSamples& fp) {
  const double cs = std::cos(pose.theta), sn = std::sin(pose.theta);
  for (const Vec2& b : fp.pts) {
    if (c.lethal_at({pose.x + cs * b.x - sn * b.y, pose.y + sn * b.x + cs * b.y})) return true;
  }
  return false;
}

}  // namespace

MppiResult mppi_plan(const Pose2D& state, std::span<const Twist2D> nominal_in, const PlannedPath& path,
                     const Costmap& c, std::span<const TrackedObstacle> tracks, const MppiParams& p,
                     std::uint64_t seed, std::uint64_t call_index) {
  p.validate();
  if (path.empty()) throw std::invalid_argument("mppi_plan: empty path");
  const auto H = static_cast<std::size_t>(p.H);
  const auto K = static_cast<std::size_t>(p.K);

  std::vector<Twist2D> nominal(nominal_in.begin(), nominal_in.end());
  nominal.resize(H, nominal.empty() ? Twist2D{} : nominal.back());

  const std::vector<Vec2> poly = simplify_path(path.waypoints, 0.25 * c.geom.resolution);
  const Vec2 goal = path.waypoints.back();
  const FootprintSamples fp(p.footprint_length, p.footprint_width, c.geom.resolution);
  const FootprintSamples fp_pad(p.footprint_length + 2.0 * p.static_margin,
                                p.footprint_width + 2.0 * p.static_margin, c.geom.resolution);
  const LethalTable table(c);
  const double pad_radius = 0.5 * std::hypot(p.footprint_length + 2.0 * p.static_margin,
                                             p.footprint_width + 2.0 * p.static_margin);
  const double reach = p.H * p.dt * std::max(std::abs(p.v_min), std::abs(p.v_max)) + p.footprint_length;

  std::vector<const TrackedObstacle*> near;
  for (const auto& tr : tracks) {
    const double travel = std::hypot(tr.velocity.x, tr.velocity.y) * p.H * p.dt;
    if (std::hypot(tr.center.x - state.x, tr.center.y - state.y) < reach + travel + tr.footprint.x + tr.footprint.y) {
      near.push_back(&tr);
    }
  }

  std::vector<double> costs(K, 0.0);
  std::vector<Twist2D> eps(K * H);
  std::vector<char> hit(K, 0);
  const std::uint64_t call_key = seed ^ RngStream::mix(call_index + 0x5bd1e995ULL);

  for (std::size_t k = 0; k < K; ++k) {
    RngStream rng(call_key, k);
    Pose2D pose = state;
    double cost = 0.0;
    const bool brake = k >= K - static_cast<std::size_t>(p.brake_rollouts);
    for (std::size_t h = 0; h < H; ++h) {
      const double nv = rng.gaussian(p.sigma_v);
      const double nw = rng.gaussian(p.sigma_omega);
      const Twist2D base = brake ? Twist2D{} : nominal[h];
      const Twist2D u{std::clamp(base.v + nv, p.v_min, p.v_max),
                      std::clamp(base.omega + nw, p.omega_min, p.omega_max)};
      eps[k * H + h] = {u.v - nominal[h].v, u.omega - nominal[h].omega};
      pose = integrate_pose(pose, u, p.dt);

      const bool open = table.clear({pose.x, pose.y}, pad_radius);
      bool collide = !open && footprint_hits_lethal(c, pose, fp);
      if (!collide) {
        const double tau = (static_cast<double>(h) + 1.0) * p.dt;
        for (const TrackedObstacle* tr : near) {
          const Rect box = Rect::centered(tr->extrapolate(tau), tr->footprint.x + 2.0 * p.track_margin,
                                          tr->footprint.y + 2.0 * p.track_margin);
          if (footprint_overlaps(pose, p.footprint_length, p.footprint_width, box)) {
            collide = true;
            break;
          }
        }
      }
      if (collide) {
        cost += p.hard_penalty;
        hit[k] = 1;
      } else {
        cost += p.w_obs * c.normalized(c.geom.cell_of({pose.x, pose.y}));
        if (!open && p.static_margin > 0.0 && footprint_hits_lethal(c, pose, fp_pad)) cost += p.w_margin;
      }
      const double d = distance_to_polyline({pose.x, pose.y}, poly);
      cost += p.w_path * d * d + p.w_ctrl * (u.v * u.v + u.omega * u.omega);
    }
    const double gx = pose.x - goal.x, gy = pose.y - goal.y;
    costs[k] = cost + p.w_goal * (gx * gx + gy * gy);
  }

  MppiResult res;
  res.weights = mppi_weights(costs, p.lambda);
  res.first_step_samples.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    res.first_step_samples.push_back({nominal[0].v + eps[k * H].v, nominal[0].omega + eps[k * H].omega});
  }
  double sum_w2 = 0.0, mean = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    sum_w2 += res.weights[k] * res.weights[k];
    mean += costs[k];
  }
  res.diag.min_cost = *std::min_element(costs.begin(), costs.end());
  res.diag.mean_cost = mean / static_cast<double>(K);
  res.diag.ess = 1.0 / sum_w2;

  if (std::all_of(hit.begin(), hit.end(), [](char x) { return x != 0; })) {
    res.diag.safe_stop = true;
    res.command = {};
    res.nominal.assign(H, Twist2D{});
    return res;
  }

  std::vector<Twist2D> updated = nominal;
  for (std::size_t h = 0; h < H; ++h) {
    double dv = 0.0, dw = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      dv += res.weights[k] * eps[k * H + h].v;
      dw += res.weights[k] * eps[k * H + h].omega;
    }
    updated[h].v = std::clamp(nominal[h].v + dv, p.v_min, p.v_max);
    updated[h].omega = std::clamp(nominal[h].omega + dw, p.omega_min, p.omega_max);
  }
  res.command = updated[0];
  res.nominal.assign(updated.begin() + 1, updated.end());
  res.nominal.push_back(updated.back());
  return res;
}

}  // namespace dbot
