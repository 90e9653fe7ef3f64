#pragma once

#include <cstdint>

#include <Eigen/Dense>

#include "dbot/kinematics.hpp"

namespace dbot {

using Covariance3 = Eigen::Matrix3d;

struct EkfState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Pose2D pose() const { return {x, y, theta}; }
  static EkfState from(const Pose2D& p) { return {p.x, p.y, p.theta}; }
};

struct NoiseConfig {
  Eigen::Matrix3d q_odom = Eigen::Vector3d(1e-4, 1e-4, 1e-5).asDiagonal();  // per 50 ms predict
  double q_reference_dt = 0.05;  // Q scales linearly with dt / q_reference_dt
  Eigen::Matrix2d r_gps = Eigen::Matrix2d::Identity();
  double r_yaw_rate = 0.02 * 0.02;
  double var_omega_odom = 0.05 * 0.05;  // encoder yaw-rate variance used for blending

  void validate() const;
};

struct EkfEstimate {
  EkfState state;
  Covariance3 cov = Covariance3::Zero();
};

// Jacobian of integrate_pose with respect to (x, y, theta).
Eigen::Matrix3d motion_jacobian(const EkfState& s, const Twist2D& odom, double dt);

EkfEstimate ekf_predict(const EkfState& s, const Covariance3& P, const Twist2D& odom, double dt,
                        const Eigen::Matrix3d& Q);

struct GpsUpdateResult {
  EkfEstimate estimate;
  bool skipped = false;  // innovation covariance was singular
};

// Linear position update with a Joseph-form covariance update.
GpsUpdateResult ekf_update_gps(const EkfState& s, const Covariance3& P, const Eigen::Vector2d& z,
                               const Eigen::Matrix2d& R);

// Precision-weighted blend of the IMU yaw rate z (variance r_imu) with the
// encoder yaw rate (variance var_odom); the result feeds the next predict.
// r_imu = 0 returns z, r_imu = +inf returns omega_odom.
double ekf_update_yawrate(double z, double omega_odom, double r_imu, double var_odom);

// Owns one filter instance plus its sensor bookkeeping.
class PoseEstimator {
 public:
  PoseEstimator(const Pose2D& initial, const Eigen::Matrix3d& P0, NoiseConfig noise);

  void predict(Twist2D odom, double dt);
  bool update_gps(const Eigen::Vector2d& z);

  const EkfState& state() const { return est_.state; }
  const Covariance3& covariance() const { return est_.cov; }
  const NoiseConfig& noise() const { return noise_; }
  std::uint64_t skipped_updates() const { return skipped_; }

 private:
  EkfEstimate est_;
  NoiseConfig noise_;
  std::uint64_t skipped_ = 0;
};

}  // namespace dbot
