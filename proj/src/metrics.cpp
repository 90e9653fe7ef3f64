#include "dbot/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"

namespace dbot {
namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_d(const std::string& s) {
  std::size_t used = 0;
  const double d = std::stod(s, &used);
  if (used != s.size()) throw MetricsError(fmt::format("bad number '{}'", s));
  return d;
}

}  // namespace

std::string trajectory_csv_header() {
  return fmt::format(
      "# dbot trajectory v{}\n"
      "t,x_true,y_true,theta_true,v_true,x_est,y_est,theta_est,x_dr,y_dr,theta_dr,"
      "set_left,set_right,pwm_left,pwm_right,mode,lock,goal_index,path_id\n",
      kTrajectorySchemaVersion);
}

std::string trajectory_csv_row(const TrajectorySample& s) {
  // {} is the shortest representation that reads back to the same double.
  return fmt::format("{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n", s.t, s.true_pose.x,
                     s.true_pose.y, s.true_pose.theta, s.v_true, s.est_pose.x, s.est_pose.y, s.est_pose.theta,
                     s.dr_pose.x, s.dr_pose.y, s.dr_pose.theta, s.setpoints.left, s.setpoints.right, s.pwm_left,
                     s.pwm_right, static_cast<int>(s.mode), static_cast<int>(s.lock), s.goal_index, s.path_id);
}

std::string path_csv_header() { return fmt::format("# dbot paths v{}\npath_id,index,x,y\n", kTrajectorySchemaVersion); }

std::string path_csv_rows(std::uint64_t id, const std::vector<Vec2>& pts) {
  std::string out;
  for (std::size_t i = 0; i < pts.size(); ++i) out += fmt::format("{},{},{},{}\n", id, i, pts[i].x, pts[i].y);
  return out;
}

std::string paths_file_for(const std::string& csv_path) { return csv_path + ".paths.csv"; }

TrajectoryLog read_trajectory(const std::string& csv_path, const std::string& paths_path) {
  TrajectoryLog log;
  std::ifstream in(csv_path);
  if (!in) throw MetricsError(fmt::format("cannot open {}", csv_path));
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto f = split(line);
    if (f.size() != 19) throw MetricsError(fmt::format("trajectory row has {} fields", f.size()));
    TrajectorySample s;
    s.t = to_d(f[0]);
    s.true_pose = {to_d(f[1]), to_d(f[2]), to_d(f[3])};
    s.v_true = to_d(f[4]);
    s.est_pose = {to_d(f[5]), to_d(f[6]), to_d(f[7])};
    s.dr_pose = {to_d(f[8]), to_d(f[9]), to_d(f[10])};
    s.setpoints = {to_d(f[11]), to_d(f[12])};
    s.pwm_left = to_d(f[13]);
    s.pwm_right = to_d(f[14]);
    s.mode = static_cast<FirmwareMode>(std::stoi(f[15]));
    s.lock = static_cast<LockState>(std::stoi(f[16]));
    s.goal_index = std::stoi(f[17]);
    s.path_id = std::stoull(f[18]);
    log.samples.push_back(s);
  }

  std::ifstream pin(paths_path);
  if (!pin) return log;
  header = false;
  while (std::getline(pin, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    const auto f = split(line);
    if (f.size() != 4) throw MetricsError("path row must have 4 fields");
    log.paths[std::stoull(f[0])].push_back({to_d(f[2]), to_d(f[3])});
  }
  return log;
}

bool MetricsReport::all_goals() const {
  for (bool g : goal_success)
    if (!g) return false;
  return true;
}

MetricsReport compute_metrics(const TrajectoryLog& log, const Scenario& s) {
  if (log.samples.empty()) throw MetricsError("empty trajectory log");
  MetricsReport m;
  m.goal_success.assign(s.goals.size(), false);

  double dev_sum = 0.0, head_sq = 0.0, est_sq = 0.0, dr_sq = 0.0;
  std::size_t dev_n = 0, head_n = 0;
  int collisions = 0;
  bool in_collision = false;

  World world = s.world;
  std::int64_t world_step_n = 0;
  const double L = s.plant.footprint_length, W = s.plant.footprint_width;

  const TrajectorySample* prev = nullptr;
  for (const auto& smp : log.samples) {
    const Vec2 p{smp.true_pose.x, smp.true_pose.y};

    if (smp.goal_index >= 0 && static_cast<std::size_t>(smp.goal_index) < s.goals.size()) {
      const Vec2 g = s.goals[smp.goal_index];
      if (std::hypot(p.x - g.x, p.y - g.y) <= s.planner.goal_tolerance) m.goal_success[smp.goal_index] = true;
    }

    if (smp.path_id != 0) {
      auto it = log.paths.find(smp.path_id);
      if (it != log.paths.end() && !it->second.empty()) {
        const auto& poly = it->second;
        double best = std::hypot(p.x - poly[0].x, p.y - poly[0].y);
        std::size_t best_seg = 0;
        double best_t = 0.0;
        for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
          double t = 0.0;
          const double d = point_segment_distance(p, poly[i], poly[i + 1], &t);
          if (d < best) {
            best = d;
            best_seg = i;
            best_t = t;
          }
        }
        dev_sum += best;
        ++dev_n;
        m.path_deviation_max = std::max(m.path_deviation_max, best);
        if (poly.size() >= 2 && smp.v_true > 0.05) {
          // At a vertex the tangent of the following segment is used, except at the end.
          std::size_t seg = best_seg;
          if (best_t >= 1.0 && seg + 2 < poly.size()) ++seg;
          const Vec2 a = poly[seg], b = poly[seg + 1];
          const double ref = std::atan2(b.y - a.y, b.x - a.x);
          const double e = normalize_angle(smp.true_pose.theta - ref);
          head_sq += e * e;
          ++head_n;
        }
      }
    }

    // Agents are re-simulated to the sample's step count.
    const std::int64_t step = std::llround(smp.t / s.sim_dt);
    while (world_step_n < step) {
      world = world_step(world, s.sim_dt);
      ++world_step_n;
    }
    bool hit = false;
    for (const auto& r : world.static_obstacles)
      if (footprint_overlaps(smp.true_pose, L, W, r)) hit = true;
    for (const auto& a : world.agents)
      if (footprint_overlaps(smp.true_pose, L, W, a.footprint())) hit = true;
    if (hit && !in_collision) ++collisions;
    in_collision = hit;

    est_sq += std::pow(smp.est_pose.x - p.x, 2) + std::pow(smp.est_pose.y - p.y, 2);
    dr_sq += std::pow(smp.dr_pose.x - p.x, 2) + std::pow(smp.dr_pose.y - p.y, 2);

    if (prev) {
      m.distance += std::hypot(p.x - prev->true_pose.x, p.y - prev->true_pose.y);
      if (smp.mode == FirmwareMode::Failsafe && prev->mode != FirmwareMode::Failsafe) ++m.failsafe_events;
      if (smp.mode == FirmwareMode::EStopped && prev->mode != FirmwareMode::EStopped) ++m.estop_events;
    }
    prev = &smp;
  }

  const double n = static_cast<double>(log.samples.size());
  m.collisions = collisions;
  m.path_deviation_mean = dev_n ? dev_sum / static_cast<double>(dev_n) : 0.0;
  m.heading_rmse = head_n ? std::sqrt(head_sq / static_cast<double>(head_n)) : 0.0;
  m.elapsed = log.samples.back().t - log.samples.front().t;
  m.position_rmse_est = std::sqrt(est_sq / n);
  m.position_rmse_dr = std::sqrt(dr_sq / n);
  return m;
}

std::string encode_metrics(const MetricsReport& m) {
  nlohmann::ordered_json j;
  j["v"] = kMetricsSchemaVersion;
  j["goal_success"] = m.goal_success;
  j["path_deviation_mean"] = m.path_deviation_mean;
  j["path_deviation_max"] = m.path_deviation_max;
  j["heading_rmse"] = m.heading_rmse;
  j["collisions"] = m.collisions;
  j["failsafe_events"] = m.failsafe_events;
  j["estop_events"] = m.estop_events;
  j["distance"] = m.distance;
  j["elapsed"] = m.elapsed;
  j["position_rmse_est"] = m.position_rmse_est;
  j["position_rmse_dr"] = m.position_rmse_dr;
  return j.dump(2) + "\n";
}

}  // namespace dbot
