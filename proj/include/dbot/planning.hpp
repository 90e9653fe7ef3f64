#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "dbot/geometry.hpp"
#include "dbot/kinematics.hpp"
#include "dbot/mapping.hpp"

namespace dbot {

struct NoPathError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidEndpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PlannedPath {
  std::vector<Vec2> waypoints;  // cell centres, 8-connected
  std::vector<CellIndex> cells;
  double cost = 0.0;  // m, including the inflation penalty
  std::uint64_t id = 0;

  bool empty() const { return waypoints.empty(); }
};

// Path costs are accumulated as integer micrometres so that every search
// order yields bit-identical totals.
using CostUm = std::int64_t;

struct AStarParams {
  double alpha = 1.0;  // m of penalty per unit of normalised inflation cost
};

CostUm step_cost_um(double resolution, bool diagonal);
CostUm edge_cost_um(const Costmap& c, CellIndex to, bool diagonal, const AStarParams& p);
// Admissible lower bound on the remaining cost between two cells.
CostUm heuristic_um(const GridGeometry& g, CellIndex a, CellIndex b);

// Called for every expanded cell with its g and h values (test hook).
using AStarExpandHook = std::function<void(CellIndex, CostUm g, CostUm h)>;

PlannedPath astar(const Costmap& c, Vec2 start, Vec2 goal, const AStarParams& p = {},
                  const AStarExpandHook& on_expand = {});

// Same search starting from cell indices (used by tests and the planner).
PlannedPath astar_cells(const Costmap& c, CellIndex start, CellIndex goal, const AStarParams& p = {},
                        const AStarExpandHook& on_expand = {});

// Whether a diagonal step between a and b squeezes past a lethal corner.
bool diagonal_blocked(const Costmap& c, CellIndex a, CellIndex b);

struct Observation {
  double t = 0.0;
  Vec2 center;
  Vec2 footprint;
};

struct TrackedObstacle {
  int id = 0;
  Vec2 center;
  Vec2 velocity;
  Vec2 footprint;
  int history_length = 0;

  Vec2 extrapolate(double tau) const { return {center.x + velocity.x * tau, center.y + velocity.y * tau}; }
};

// Constant-velocity model from the last two observations of each id.
std::vector<TrackedObstacle> predict_tracks(const std::map<int, std::vector<Observation>>& history);

// Bounded per-id observation history for the autonomy loop.
class TrackHistory {
 public:
  explicit TrackHistory(std::size_t depth = 8, double stale_after = 1.0) : depth_(depth), stale_(stale_after) {}
  void observe(int id, const Observation& o);
  void prune(double now);
  std::vector<TrackedObstacle> tracks() const;
  const std::map<int, std::vector<Observation>>& history() const { return hist_; }

 private:
  std::size_t depth_;
  double stale_;
  std::map<int, std::vector<Observation>> hist_;
};

struct MppiParams {
  int K = 256;
  int H = 30;
  double dt = 0.1;
  double lambda = 1.0;
  double sigma_v = 0.3;
  double sigma_omega = 0.5;
  double w_obs = 10.0;
  double w_path = 2.0;
  double w_goal = 5.0;
  double w_ctrl = 0.1;
  double v_min = -0.2, v_max = 1.2;
  double omega_min = -1.5, omega_max = 1.5;
  double footprint_length = 0.55;
  double footprint_width = 0.54;
  double track_margin = 0.1;
  // A footprint padded by static_margin that touches a lethal cell costs
  // w_margin per step. Soft, so a robot already inside the margin can still
  // back out; it keeps clearance for pose estimate error.
  double static_margin = 0.08;
  double w_margin = 20.0;
  double hard_penalty = 1e6;
  // The last brake_rollouts samples perturb a zero control sequence instead
  // of the nominal, so stopping stays reachable from a fast nominal.
  int brake_rollouts = 0;

  void validate() const;
};

struct MppiDiagnostics {
  double min_cost = 0.0;
  double mean_cost = 0.0;
  double ess = 0.0;  // effective sample size 1 / sum(w^2)
  bool safe_stop = false;
};

struct MppiResult {
  Twist2D command;
  std::vector<Twist2D> nominal;  // shifted, ready for the next call
  MppiDiagnostics diag;
  std::vector<Twist2D> first_step_samples;  // clamped sampled controls at step 0
  std::vector<double> weights;
};

// Normalised exp(-(c - min)/lambda) weights.
std::vector<double> mppi_weights(std::span<const double> costs, double lambda);

// Polyline simplification (Douglas-Peucker) used to make path-distance
// queries cheap; tolerance in metres.
std::vector<Vec2> simplify_path(std::span<const Vec2> pts, double tolerance);
double distance_to_polyline(Vec2 p, std::span<const Vec2> poly);

// One receding-horizon MPPI step. Rollout k of call n draws from the
// counter stream (seed, n, k), so results do not depend on evaluation order.
MppiResult mppi_plan(const Pose2D& state, std::span<const Twist2D> nominal, const PlannedPath& path,
                     const Costmap& c, std::span<const TrackedObstacle> tracks, const MppiParams& p,
                     std::uint64_t seed, std::uint64_t call_index);

}  // namespace dbot
