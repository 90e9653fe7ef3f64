#include "dbot/plant.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dbot {

namespace {

constexpr std::array<std::string_view, 8> kClassNames = {
    "Car", "Van", "Truck", "Pedestrian", "PersonSitting", "Cyclist", "Tram", "Misc"};

}  // namespace

std::string_view to_string(ObjectClass c) { return kClassNames[static_cast<std::size_t>(c)]; }

ObjectClass object_class_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kClassNames.size(); ++i) {
    if (kClassNames[i] == s) return static_cast<ObjectClass>(i);
  }
  throw std::invalid_argument("unknown object class: " + std::string(s));
}

void World::validate() const {
  if (!(bounds.xmax > bounds.xmin && bounds.ymax > bounds.ymin)) {
    throw ParameterError("world bounds must have positive area");
  }
  for (const Rect& r : static_obstacles) {
    if (!(r.xmax > r.xmin && r.ymax > r.ymin)) throw ParameterError("obstacle must have positive area");
    if (!bounds.contains(r)) throw ParameterError("obstacle outside world bounds");
  }
  for (const Agent& a : agents) {
    if (!(a.size_x > 0.0 && a.size_y > 0.0)) throw ParameterError("agent footprint must have positive area");
  }
}

MotorStepResult motor_step(const MotorState& s, double pwm_cmd, double dt, double tau_m,
                           double omega_max) {
  if (!(dt > 0.0) || !(tau_m > 0.0)) throw ParameterError("motor_step needs dt > 0 and tau_m > 0");
  MotorStepResult out;
  double pwm = pwm_cmd;
  if (pwm > 1.0 || pwm < -1.0 || !std::isfinite(pwm)) {
    out.clamped = true;
    pwm = std::isfinite(pwm) ? std::clamp(pwm, -1.0, 1.0) : 0.0;
  }
  const double target = pwm * omega_max;
  out.state.omega = s.omega + (target - s.omega) * -std::expm1(-dt / tau_m);
  out.state.pwm = pwm;
  return out;
}

EncoderState encoder_step(const EncoderState& e, double omega, double dt, int ticks_per_rev) {
  const double tick = 2.0 * kPi / ticks_per_rev;
  EncoderState out = e;
  out.residual += omega * dt;
  // Tolerate representation error so an exact revolution emits all its ticks.
  const double whole = std::trunc(out.residual / tick + std::copysign(1e-9, out.residual));
  if (whole != 0.0) {
    out.ticks += static_cast<std::int64_t>(whole);
    out.residual -= whole * tick;
  }
  return out;
}

void LidarParams::validate() const {
  if (n_beams < 1) throw ParameterError("lidar n_beams must be >= 1");
  if (!(fov > 0.0 && fov <= 2.0 * kPi)) throw ParameterError("lidar fov must be in (0, 2pi]");
  if (!(max_range > 0.0)) throw ParameterError("lidar max_range must be > 0");
  if (!(sigma_r >= 0.0)) throw ParameterError("lidar sigma_r must be >= 0");
}

double LidarParams::beam_angle(int k) const {
  if (n_beams == 1) return 0.0;
  return fov * (static_cast<double>(k) / (n_beams - 1) - 0.5);
}

std::vector<double> lidar_scan(const World& w, const Pose2D& pose, const LidarParams& p,
                               RngStream& rng) {
  std::vector<double> ranges(static_cast<std::size_t>(p.n_beams), p.max_range);
  const Vec2 origin{pose.x, pose.y};
  const double below_max = std::nextafter(p.max_range, 0.0);
  for (int k = 0; k < p.n_beams; ++k) {
    const double angle = pose.theta + p.beam_angle(k);
    double best = std::numeric_limits<double>::infinity();
    for (const Rect& r : w.static_obstacles) {
      if (auto d = ray_rect_distance(origin, angle, r)) best = std::min(best, *d);
    }
    for (const Agent& a : w.agents) {
      if (auto d = ray_rect_distance(origin, angle, a.footprint())) best = std::min(best, *d);
    }
    const double noise = rng.gaussian(p.sigma_r);
    if (best <= p.max_range) {
      const double r = best + noise;
      ranges[static_cast<std::size_t>(k)] = std::clamp(r, 1e-6, below_max);
    }
  }
  return ranges;
}

Vec2 sample_gps(const Pose2D& pose, double sigma_xy, RngStream& rng) {
  const double nx = rng.gaussian(sigma_xy);
  const double ny = rng.gaussian(sigma_xy);
  return {pose.x + nx, pose.y + ny};
}

double sample_yaw_rate(const Twist2D& twist, double sigma_yaw_rate, RngStream& rng) {
  return twist.omega + rng.gaussian(sigma_yaw_rate);
}

GpsImuSample sample_gps_imu(const Pose2D& pose, const Twist2D& twist, const GpsImuNoise& noise,
                            RngStream& rng) {
  if (noise.sigma_xy < 0.0 || noise.sigma_yaw_rate < 0.0) throw ParameterError("negative sigma");
  GpsImuSample s;
  s.gps = sample_gps(pose, noise.sigma_xy, rng);
  s.yaw_rate = sample_yaw_rate(twist, noise.sigma_yaw_rate, rng);
  return s;
}

BatteryState battery_step(const BatteryState& b, double current, double dt) {
  BatteryState out = b;
  out.soc = std::clamp(b.soc - current * dt / (3600.0 * b.capacity), 0.0, 1.0);
  out.voltage = out.open_circuit() - current * b.internal_resistance;
  return out;
}

std::vector<Detection> detect(const World& w, const Pose2D& pose, double fov, double range,
                              double noise_xy, double dropout, RngStream& rng) {
  std::vector<Detection> out;
  for (const Agent& a : w.agents) {
    const double dx = a.pose.x - pose.x;
    const double dy = a.pose.y - pose.y;
    if (std::hypot(dx, dy) > range) continue;
    const double bearing = normalize_angle(std::atan2(dy, dx) - pose.theta);
    if (std::abs(bearing) > fov / 2.0) continue;
    // Fixed draw count per visible agent keeps the stream aligned.
    const bool dropped = rng.bernoulli(dropout);
    const double nx = rng.gaussian(noise_xy);
    const double ny = rng.gaussian(noise_xy);
    if (dropped) continue;
    Detection d;
    d.agent_id = a.id;
    d.cls = a.cls;
    d.center = {a.pose.x + nx, a.pose.y + ny};
    d.footprint = {a.size_x, a.size_y};
    d.confidence = 1.0 - dropout;
    out.push_back(d);
  }
  return out;
}

namespace {

// Reflects a coordinate into [lo, hi]; returns true when a bounce happened.
bool reflect(double& c, double lo, double hi) {
  if (hi <= lo) {
    c = 0.5 * (lo + hi);
    return false;
  }
  bool bounced = false;
  for (int i = 0; i < 8 && (c < lo || c > hi); ++i) {
    c = c < lo ? 2.0 * lo - c : 2.0 * hi - c;
    bounced = !bounced;
  }
  c = std::clamp(c, lo, hi);
  return bounced;
}

}  // namespace

World world_step(const World& w, double dt) {
  World out = w;
  for (Agent& a : out.agents) {
    if (a.twist.v == 0.0 && a.twist.omega == 0.0) continue;
    a.pose = integrate_pose(a.pose, a.twist, dt);
    const Rect& b = w.bounds;
    if (reflect(a.pose.x, b.xmin + a.size_x / 2.0, b.xmax - a.size_x / 2.0)) {
      a.pose.theta = normalize_angle(kPi - a.pose.theta);
    }
    if (reflect(a.pose.y, b.ymin + a.size_y / 2.0, b.ymax - a.size_y / 2.0)) {
      a.pose.theta = normalize_angle(-a.pose.theta);
    }
  }
  return out;
}

Plant::Plant(PlantConfig cfg, World world, Pose2D start, BatteryState battery)
    : cfg_(std::move(cfg)), world_(std::move(world)), pose_(start), battery_(battery) {
  cfg_.robot.validate();
  world_.validate();
  battery_.voltage = battery_.open_circuit();
}

void Plant::step(double pwm_left, double pwm_right, bool relay_closed, double dt) {
  const double omega_max = cfg_.robot.wheel_omega_max;
  if (!relay_closed) pwm_left = pwm_right = 0.0;
  const auto l = motor_step(left_, pwm_left, dt, cfg_.motor_tau, omega_max);
  const auto r = motor_step(right_, pwm_right, dt, cfg_.motor_tau, omega_max);
  clamp_warnings_ += static_cast<std::uint64_t>(l.clamped) + static_cast<std::uint64_t>(r.clamped);
  left_ = l.state;
  right_ = r.state;

  const int tpr = cfg_.robot.ticks_per_wheel_rev;
  enc_left_ = encoder_step(enc_left_, left_.omega, dt, tpr);
  enc_right_ = encoder_step(enc_right_, right_.omega, dt, tpr);

  const double rad = cfg_.robot.wheel_radius;
  const double vl = left_.omega * rad * cfg_.left_radius_scale;
  const double vr = right_.omega * rad * cfg_.right_radius_scale;
  twist_ = {(vl + vr) / 2.0, (vr - vl) / (cfg_.robot.track_width * cfg_.track_scale)};
  pose_ = integrate_pose(pose_, twist_, dt);

  world_ = world_step(world_, dt);
  battery_ = battery_step(battery_, cfg_.logic_current, dt);
}

}  // namespace dbot
