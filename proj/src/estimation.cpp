#include "dbot/estimation.hpp"

#include <cmath>
#include <limits>

namespace dbot {

namespace {

bool is_psd(const Eigen::MatrixXd& m) {
  if (!m.isApprox(m.transpose(), 1e-9)) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvalues().minCoeff() >= -1e-12;
}

Covariance3 symmetrize(const Covariance3& P) { return 0.5 * (P + P.transpose()); }

}  // namespace

void NoiseConfig::validate() const {
  if (!is_psd(q_odom)) throw ParameterError("Q must be symmetric PSD");
  if (!is_psd(r_gps)) throw ParameterError("R_gps must be symmetric PSD");
  if (!(r_yaw_rate >= 0.0)) throw ParameterError("R_yawrate must be >= 0");
  if (!(var_omega_odom >= 0.0)) throw ParameterError("odometry yaw-rate variance must be >= 0");
  if (!(q_reference_dt > 0.0)) throw ParameterError("q_reference_dt must be > 0");
}

Eigen::Matrix3d motion_jacobian(const EkfState& s, const Twist2D& odom, double dt) {
  Eigen::Matrix3d F = Eigen::Matrix3d::Identity();
  if (std::abs(odom.omega) > kStraightOmega) {
    const double r = odom.v / odom.omega;
    const double th1 = s.theta + odom.omega * dt;
    F(0, 2) = r * (std::cos(th1) - std::cos(s.theta));
    F(1, 2) = r * (std::sin(th1) - std::sin(s.theta));
  } else {
    F(0, 2) = -odom.v * dt * std::sin(s.theta);
    F(1, 2) = odom.v * dt * std::cos(s.theta);
  }
  return F;
}

EkfEstimate ekf_predict(const EkfState& s, const Covariance3& P, const Twist2D& odom, double dt,
                        const Eigen::Matrix3d& Q) {
  if (!(dt > 0.0)) throw ParameterError("ekf_predict needs dt > 0");
  const Eigen::Matrix3d F = motion_jacobian(s, odom, dt);
  EkfEstimate out;
  out.state = EkfState::from(integrate_pose(s.pose(), odom, dt));
  out.cov = symmetrize(F * P * F.transpose() + Q);
  return out;
}

GpsUpdateResult ekf_update_gps(const EkfState& s, const Covariance3& P, const Eigen::Vector2d& z,
                               const Eigen::Matrix2d& R) {
  GpsUpdateResult out;
  out.estimate = {s, P};

  Eigen::Matrix<double, 2, 3> H = Eigen::Matrix<double, 2, 3>::Zero();
  H(0, 0) = 1.0;
  H(1, 1) = 1.0;
  const Eigen::Matrix2d S = H * P * H.transpose() + R;
  const double det = S.determinant();
  if (!std::isfinite(det) || std::abs(det) <= 1e-300) {
    out.skipped = true;
    return out;
  }
  const Eigen::Matrix<double, 3, 2> K = P * H.transpose() * S.inverse();
  const Eigen::Vector2d innovation = z - Eigen::Vector2d(s.x, s.y);
  const Eigen::Vector3d dx = K * innovation;

  out.estimate.state = {s.x + dx(0), s.y + dx(1), normalize_angle(s.theta + dx(2))};
  const Eigen::Matrix3d IKH = Eigen::Matrix3d::Identity() - K * H;
  out.estimate.cov = symmetrize(IKH * P * IKH.transpose() + K * R * K.transpose());
  return out;
}

double ekf_update_yawrate(double z, double omega_odom, double r_imu, double var_odom) {
  if (r_imu <= 0.0) return z;
  if (std::isinf(r_imu) || var_odom <= 0.0) return omega_odom;
  const double w_imu = 1.0 / r_imu;
  const double w_odom = 1.0 / var_odom;
  return (w_imu * z + w_odom * omega_odom) / (w_imu + w_odom);
}

PoseEstimator::PoseEstimator(const Pose2D& initial, const Eigen::Matrix3d& P0, NoiseConfig noise)
    : noise_(std::move(noise)) {
  noise_.validate();
  est_.state = EkfState::from(initial);
  est_.cov = P0;
}

void PoseEstimator::predict(Twist2D odom, double dt) {
  const Eigen::Matrix3d Q = noise_.q_odom * (dt / noise_.q_reference_dt);
  est_ = ekf_predict(est_.state, est_.cov, odom, dt, Q);
}

bool PoseEstimator::update_gps(const Eigen::Vector2d& z) {
  auto r = ekf_update_gps(est_.state, est_.cov, z, noise_.r_gps);
  if (r.skipped) {
    ++skipped_;
    return false;
  }
  est_ = r.estimate;
  return true;
}

}  // namespace dbot
