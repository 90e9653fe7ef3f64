#include "dbot/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dbot {

namespace {

void require(bool ok, const char* what) {
  if (!ok) throw ParameterError(what);
}

}  // namespace

void RobotParams::validate() const {
  require(mass > 0.0, "mass must be > 0");
  require(wheel_radius > 0.0, "wheel_radius must be > 0");
  require(track_width > 0.0, "track_width must be > 0");
  require(wheel_count >= 2 && wheel_count % 2 == 0, "wheel_count must be even and >= 2");
  require(mu >= 0.0, "mu must be >= 0");
  require(g > 0.0, "g must be > 0");
  require(v_max > 0.0, "v_max must be > 0");
  require(wheel_omega_max > 0.0, "wheel_omega_max must be > 0");
  require(ticks_per_wheel_rev > 0, "ticks_per_wheel_rev must be > 0");
  require(v_max / wheel_radius <= wheel_omega_max, "v_max / wheel_radius exceeds wheel_omega_max");
}

SaturationError::SaturationError(WheelSpeeds req, WheelSpeeds clamp)
    : std::runtime_error("wheel speed saturation"), requested(req), clamped(clamp) {}

double normalize_angle(double a) {
  if (a > -kPi && a <= kPi) return a;
  a = std::remainder(a, 2.0 * kPi);  // [-pi, pi]
  if (a <= -kPi) a += 2.0 * kPi;
  return a;
}

SizingReport actuator_sizing(const RobotParams& params, double v_target) {
  params.validate();
  if (!(v_target > 0.0) || !std::isfinite(v_target)) throw ParameterError("v_target must be > 0");

  SizingReport r;
  r.omega_required = v_target / params.wheel_radius;
  r.rpm_required = r.omega_required * 60.0 / (2.0 * kPi);
  r.weight = params.mass * params.g;
  r.wheel_load = r.weight / params.wheel_count;
  r.traction_force = params.mu * r.wheel_load;
  r.startup_torque = r.traction_force * params.wheel_radius;
  return r;
}

namespace {

WheelSpeeds raw_wheels(const Twist2D& t, const RobotParams& p) {
  const double half = 0.5 * p.track_width * t.omega;
  return {(t.v - half) / p.wheel_radius, (t.v + half) / p.wheel_radius};
}

}  // namespace

WheelSpeeds wheels_from_twist(const Twist2D& t, const RobotParams& p) {
  const WheelSpeeds w = raw_wheels(t, p);
  const double peak = std::max(std::abs(w.left), std::abs(w.right));
  if (peak > p.wheel_omega_max) {
    const double s = p.wheel_omega_max / peak;
    throw SaturationError(w, {w.left * s, w.right * s});
  }
  return w;
}

WheelSpeeds wheels_from_twist_clamped(const Twist2D& t, const RobotParams& p) {
  try {
    return wheels_from_twist(t, p);
  } catch (const SaturationError& e) {
    return e.clamped;
  }
}

Twist2D twist_from_wheels(const WheelSpeeds& w, const RobotParams& p) {
  return {p.wheel_radius * (w.left + w.right) / 2.0,
          p.wheel_radius * (w.right - w.left) / p.track_width};
}

Pose2D integrate_pose(const Pose2D& pose, const Twist2D& t, double dt) {
  Pose2D out = pose;
  if (std::abs(t.omega) > kStraightOmega) {
    const double r = t.v / t.omega;
    const double th1 = pose.theta + t.omega * dt;
    out.x += r * (std::sin(th1) - std::sin(pose.theta));
    out.y -= r * (std::cos(th1) - std::cos(pose.theta));
    out.theta = normalize_angle(th1);
  } else {
    out.x += t.v * dt * std::cos(pose.theta);
    out.y += t.v * dt * std::sin(pose.theta);
    out.theta = normalize_angle(pose.theta + t.omega * dt);
  }
  return out;
}

}  // namespace dbot
