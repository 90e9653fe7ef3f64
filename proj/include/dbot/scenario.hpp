#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dbot/estimation.hpp"
#include "dbot/firmware.hpp"
#include "dbot/kinematics.hpp"
#include "dbot/link.hpp"
#include "dbot/plant.hpp"
#include "dbot/planning.hpp"

namespace dbot {

struct ScenarioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Rates {
  double control_hz = 100.0;
  double status_hz = 20.0;
  double autonomy_hz = 10.0;
  double telemetry_hz = 10.0;
  double gps_hz = 2.0;
  double map_snapshot_period = 2.0;  // s
};

struct SensorNoise {
  double gps_sigma = 1.0;
  double yaw_rate_sigma = 0.02;
  double detector_sigma = 0.05;
  double detector_dropout = 0.0;
  double detector_range = 8.0;
  double detector_fov = 2.0 * kPi;
};

struct BatteryOverride {
  double start = 0.0;
  double end = 0.0;
  double voltage = 0.0;
};

struct FaultConfig {
  ChannelModel channel;
  std::vector<BatteryOverride> battery_overrides;
};

struct MappingConfig {
  double resolution = 0.05;
  double l_occ = 0.85;
  double l_free = -0.40;
  double l_max = 10.0;
  double occ_threshold = 2.0;
  double inflation_radius = 0.37;  // half-width 0.27 m + 0.1 m margin
};

struct PlannerConfig {
  AStarParams astar;
  MppiParams mppi;
  double goal_tolerance = 0.3;     // success radius used by the metrics
  double arrival_tolerance = 0.15;  // estimate-based arrival; leaves room for estimate error
  double replan_deviation = 1.0;
  double dynamic_mask_margin = 0.2;
};

struct OpenLoopDrive {
  double v = 1.0;
  double period = 20.0;  // one full figure-eight
};

struct Scenario {
  std::uint64_t seed = 0;
  double duration = 0.0;
  double sim_dt = 0.005;
  PlantConfig plant;  // includes RobotParams
  Pose2D start;
  BatteryState battery;
  World world;
  std::vector<Vec2> goals;
  LidarParams lidar;
  SensorNoise sensors;
  NoiseConfig ekf;
  FaultConfig faults;
  Rates rates;
  FirmwareConfig firmware;
  MappingConfig mapping;
  PlannerConfig planner;
  bool use_encoders = true;
  std::optional<OpenLoopDrive> open_loop;

  // Simulation steps per task period; validated to be exact integers.
  int control_steps() const;
  int status_ticks() const;  // control ticks per Status frame
  int autonomy_steps() const;
  int telemetry_steps() const;
  int gps_steps() const;
  std::int64_t total_steps() const;

  void validate() const;
};

// Strict JSON scenario loader: unknown or duplicate keys, wrong types and
// non-dividing task periods are rejected with the offending key path.
Scenario parse_scenario(const std::string& text);
Scenario load_scenario(const std::string& path);

// RobotParams from a (possibly partial) JSON object, used by `dbot size`.
RobotParams parse_robot_params(const std::string& text);

}  // namespace dbot
