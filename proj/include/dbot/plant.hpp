#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dbot/geometry.hpp"
#include "dbot/kinematics.hpp"
#include "dbot/rng.hpp"

namespace dbot {

// KITTI object vocabulary used by the synthetic detector.
enum class ObjectClass : std::uint8_t { Car, Van, Truck, Pedestrian, PersonSitting, Cyclist, Tram, Misc };

std::string_view to_string(ObjectClass c);
// Throws std::invalid_argument on an unknown name.
ObjectClass object_class_from_string(std::string_view s);

struct Agent {
  int id = 0;
  ObjectClass cls = ObjectClass::Pedestrian;
  Pose2D pose;
  Twist2D twist;
  double size_x = 0.5;  // axis-aligned footprint extents, m
  double size_y = 0.5;

  Rect footprint() const { return Rect::centered({pose.x, pose.y}, size_x, size_y); }
};

struct World {
  Rect bounds{0.0, 0.0, 10.0, 10.0};
  std::vector<Rect> static_obstacles;
  std::vector<Agent> agents;

  void validate() const;
};

struct MotorState {
  double omega = 0.0;  // rad/s
  double pwm = 0.0;    // duty in [-1, 1]
};

struct MotorStepResult {
  MotorState state;
  bool clamped = false;  // pwm_cmd was outside [-1, 1]
};

// First-order lag toward pwm * omega_max, discretized exactly.
MotorStepResult motor_step(const MotorState& s, double pwm_cmd, double dt, double tau_m,
                           double omega_max);

struct EncoderState {
  std::int64_t ticks = 0;
  double residual = 0.0;  // rad not yet emitted as a whole tick
};

EncoderState encoder_step(const EncoderState& e, double omega, double dt, int ticks_per_rev);

struct LidarParams {
  int n_beams = 360;
  double fov = 2.0 * kPi;
  double max_range = 8.0;
  double sigma_r = 0.01;

  void validate() const;
  double beam_angle(int k) const;  // relative to the sensor heading
};

std::vector<double> lidar_scan(const World& w, const Pose2D& pose, const LidarParams& p,
                               RngStream& rng);

struct GpsImuNoise {
  double sigma_xy = 1.0;
  double sigma_yaw_rate = 0.02;
};

struct GpsImuSample {
  Vec2 gps;
  double yaw_rate = 0.0;
};

Vec2 sample_gps(const Pose2D& pose, double sigma_xy, RngStream& rng);
double sample_yaw_rate(const Twist2D& twist, double sigma_yaw_rate, RngStream& rng);
GpsImuSample sample_gps_imu(const Pose2D& pose, const Twist2D& twist, const GpsImuNoise& noise,
                            RngStream& rng);

struct BatteryState {
  double soc = 1.0;
  double voltage = 8.4;
  double capacity = 2.5;  // A*h
  double internal_resistance = 0.1;
  double v_full = 8.4;
  double v_empty = 6.0;

  double open_circuit() const { return v_full - (v_full - v_empty) * (1.0 - soc); }
};

BatteryState battery_step(const BatteryState& b, double current, double dt);

struct Detection {
  int agent_id = 0;
  ObjectClass cls = ObjectClass::Misc;
  Vec2 center;
  Vec2 footprint;  // extents along x and y
  double confidence = 1.0;
};

std::vector<Detection> detect(const World& w, const Pose2D& pose, double fov, double range,
                              double noise_xy, double dropout, RngStream& rng);

// Advances agents along their twists; agents bounce off the world bounds.
World world_step(const World& w, double dt);

struct PlantConfig {
  RobotParams robot;
  double motor_tau = 0.15;
  // Ground-truth deviations from the nominal model (skid-steer slip proxy).
  double left_radius_scale = 1.0;
  double right_radius_scale = 1.0;
  double track_scale = 1.0;
  double logic_current = 1.0;  // A drawn from the logic battery
  double footprint_length = 0.55;
  double footprint_width = 0.54;
};

// Full ground-truth plant: two motor sides, encoders, battery, robot pose and
// the agent world. Advanced only by step().
class Plant {
 public:
  Plant(PlantConfig cfg, World world, Pose2D start, BatteryState battery = {});

  void step(double pwm_left, double pwm_right, bool relay_closed, double dt);

  const PlantConfig& config() const { return cfg_; }
  const World& world() const { return world_; }
  const Pose2D& pose() const { return pose_; }
  const Twist2D& twist() const { return twist_; }
  const MotorState& motor_left() const { return left_; }
  const MotorState& motor_right() const { return right_; }
  const EncoderState& encoder_left() const { return enc_left_; }
  const EncoderState& encoder_right() const { return enc_right_; }
  const BatteryState& battery() const { return battery_; }
  std::uint64_t pwm_clamp_warnings() const { return clamp_warnings_; }

 private:
  PlantConfig cfg_;
  World world_;
  Pose2D pose_;
  Twist2D twist_;
  MotorState left_, right_;
  EncoderState enc_left_, enc_right_;
  BatteryState battery_;
  std::uint64_t clamp_warnings_ = 0;
};

}  // namespace dbot
