#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbot/firmware.hpp"
#include "dbot/geometry.hpp"
#include "dbot/kinematics.hpp"
#include "dbot/scenario.hpp"

namespace dbot {

inline constexpr int kTrajectorySchemaVersion = 1;
inline constexpr int kMetricsSchemaVersion = 1;

struct MetricsError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One row per control tick.
struct TrajectorySample {
  double t = 0.0;
  Pose2D true_pose;
  double v_true = 0.0;
  Pose2D est_pose;
  Pose2D dr_pose;  // encoder/IMU dead reckoning, no GPS
  WheelSpeeds setpoints;
  double pwm_left = 0.0;
  double pwm_right = 0.0;
  FirmwareMode mode = FirmwareMode::Init;
  LockState lock = LockState::Locked;
  int goal_index = 0;            // goals.size() once every goal is done
  std::uint64_t path_id = 0;     // active global path, 0 = none
};

struct TrajectoryLog {
  std::vector<TrajectorySample> samples;
  std::map<std::uint64_t, std::vector<Vec2>> paths;
};

std::string trajectory_csv_header();
std::string trajectory_csv_row(const TrajectorySample& s);
std::string path_csv_header();
std::string path_csv_rows(std::uint64_t id, const std::vector<Vec2>& pts);

// Reads a trajectory CSV and its companion path file written by the runner.
TrajectoryLog read_trajectory(const std::string& csv_path, const std::string& paths_path);
std::string paths_file_for(const std::string& csv_path);

struct MetricsReport {
  std::vector<bool> goal_success;
  double path_deviation_mean = 0.0;
  double path_deviation_max = 0.0;
  double heading_rmse = 0.0;  // executed heading vs path tangent, samples with v > 0.05
  int collisions = 0;
  int failsafe_events = 0;
  int estop_events = 0;
  double distance = 0.0;
  double elapsed = 0.0;
  double position_rmse_est = 0.0;  // vs ground truth
  double position_rmse_dr = 0.0;

  bool all_goals() const;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

// Everything is derived from the log and the scenario; agents are re-simulated
// from the scenario for the collision test.
MetricsReport compute_metrics(const TrajectoryLog& log, const Scenario& s);

std::string encode_metrics(const MetricsReport& m);

}  // namespace dbot
