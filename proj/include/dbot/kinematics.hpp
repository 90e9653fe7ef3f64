#pragma once

#include <stdexcept>

namespace dbot {

inline constexpr double kPi = 3.14159265358979323846;

struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct RobotParams {
  double mass = 15.0;          // kg
  double wheel_radius = 0.09;  // m (18 cm wheel)
  double track_width = 0.45;   // m, effective contact-line spacing
  int wheel_count = 4;
  double mu = 0.6;
  double g = 9.81;
  double v_max = 3.0;            // m/s
  double wheel_omega_max = 36.0;  // rad/s
  int ticks_per_wheel_rev = 374;

  // Throws ParameterError naming the first violated invariant.
  void validate() const;
};

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

struct Twist2D {
  double v = 0.0;
  double omega = 0.0;
};

struct WheelSpeeds {
  double left = 0.0;
  double right = 0.0;
};

struct SizingReport {
  double omega_required = 0.0;  // rad/s
  double rpm_required = 0.0;
  double weight = 0.0;          // N
  double wheel_load = 0.0;      // N
  double traction_force = 0.0;  // N
  double startup_torque = 0.0;  // N*m
};

// Thrown when a twist needs more wheel speed than the motors provide. Carries
// the proportionally scaled (curvature-preserving) wheel speeds.
struct SaturationError : std::runtime_error {
  SaturationError(WheelSpeeds requested, WheelSpeeds clamped);
  WheelSpeeds requested;
  WheelSpeeds clamped;
};

// Wraps to (-pi, pi].
double normalize_angle(double a);

SizingReport actuator_sizing(const RobotParams& params, double v_target);

WheelSpeeds wheels_from_twist(const Twist2D& t, const RobotParams& p);
// Same as wheels_from_twist but scales both sides down instead of throwing.
WheelSpeeds wheels_from_twist_clamped(const Twist2D& t, const RobotParams& p);
Twist2D twist_from_wheels(const WheelSpeeds& w, const RobotParams& p);

// Exact-arc integration about the instantaneous center of curvature; falls
// back to a straight line for |omega| <= kStraightOmega.
inline constexpr double kStraightOmega = 1e-9;
Pose2D integrate_pose(const Pose2D& pose, const Twist2D& t, double dt);

}  // namespace dbot
