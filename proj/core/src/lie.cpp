#include "rifls/lie.hpp"

#include <Eigen/SVD>
#include <cmath>

#include "rifls/error.hpp"

namespace rifls::lie {

namespace {

// Coefficients of the SE_2(3) off-diagonal Jacobian blocks:
//   a = (t - sin t) / t^3
//   b = (t^2 + 2 cos t - 2) / (2 t^4)
//   c = (2 t - 3 sin t + t cos t) / (2 t^5)
struct QCoefficients {
  double a, b, c;
};

QCoefficients q_coefficients(double t) {
  if (t < kSmallAngleHighOrder) {
    const double t2 = t * t;
    const double t4 = t2 * t2;
    return {1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
            1.0 / 24.0 - t2 / 720.0 + t4 / 40320.0,
            1.0 / 120.0 - t2 / 2520.0 + t4 / 120960.0};
  }
  const double s = std::sin(t);
  const double c = std::cos(t);
  const double t2 = t * t;
  const double t3 = t2 * t;
  const double t4 = t2 * t2;
  return {(t - s) / t3, (t2 + 2.0 * c - 2.0) / (2.0 * t4),
          (2.0 * t - 3.0 * s + t * c) / (2.0 * t4 * t)};
}

// Off-diagonal block of the SE(3)/SE_2(3) left Jacobian for a translational
// component rho paired with rotation phi.
Mat3 q_block(const Vec3& rho, const Vec3& phi) {
  const Mat3 P = skew(phi);
  const Mat3 Rh = skew(rho);
  const QCoefficients k = q_coefficients(phi.norm());
  const Mat3 PR = P * Rh;
  const Mat3 RP = Rh * P;
  const Mat3 PRP = PR * P;
  return 0.5 * Rh + k.a * (PR + RP + PRP) + k.b * (P * PR + RP * P - 3.0 * PRP) +
         k.c * (PRP * P + P * PRP);
}

}  // namespace

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

Vec3 unskew(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

double Rot3::orthonormality_defect() const {
  return (m_.transpose() * m_ - Mat3::Identity()).cwiseAbs().maxCoeff();
}

bool Rot3::is_valid(double tol) const {
  return orthonormality_defect() <= tol && std::abs(m_.determinant() - 1.0) <= tol;
}

Rot3 Rot3::normalized() const {
  Eigen::JacobiSVD<Mat3> svd(m_, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  if ((u * v.transpose()).determinant() < 0.0) u.col(2) *= -1.0;
  return Rot3(u * v.transpose());
}

Rot3 so3_exp(const Vec3& w) {
  const double t = w.norm();
  const Mat3 W = skew(w);
  if (t < kSmallAngle) return Rot3(Mat3::Identity() + W + 0.5 * W * W);
  const double h = std::sin(0.5 * t) / t;
  return Rot3(Mat3::Identity() + (std::sin(t) / t) * W + (2.0 * h * h) * W * W);
}

double rotation_angle(const Rot3& r) {
  const Mat3& m = r.matrix();
  const double cos_t = 0.5 * (m.trace() - 1.0);
  const double sin_t = 0.5 * unskew(m - m.transpose()).norm();
  return std::atan2(sin_t, cos_t);
}

Vec3 so3_log(const Rot3& r) {
  const Mat3& m = r.matrix();
  const double t = rotation_angle(r);
  if (t > M_PI - kLogAngleMargin) {
    throw Error(ErrorCode::AngleNearPi, "rotation angle " + std::to_string(t));
  }
  const Vec3 axis_sin = 0.5 * unskew(m - m.transpose());
  if (t < kSmallAngle) return axis_sin * (1.0 + t * t / 6.0);
  return axis_sin * (t / std::sin(t));
}

Mat3 so3_left_jacobian(const Vec3& w) {
  const double t = w.norm();
  const Mat3 W = skew(w);
  if (t < kSmallAngle) return Mat3::Identity() + 0.5 * W + W * W / 6.0;
  const double h = std::sin(0.5 * t) / t;
  return Mat3::Identity() + (2.0 * h * h) * W + ((t - std::sin(t)) / (t * t * t)) * W * W;
}

Mat3 so3_left_jacobian_inv(const Vec3& w) {
  const double t = w.norm();
  const Mat3 W = skew(w);
  if (t < kSmallAngle) return Mat3::Identity() - 0.5 * W + W * W / 12.0;
  const double k = 1.0 / (t * t) - (1.0 + std::cos(t)) / (2.0 * t * std::sin(t));
  return Mat3::Identity() - 0.5 * W + k * W * W;
}

Vec9 TangentSE23::vector() const {
  Vec9 xi;
  xi << dtheta, dv, dp;
  return xi;
}

TangentSE23 TangentSE23::from_vector(const Vec9& xi) {
  return {xi.segment<3>(0), xi.segment<3>(3), xi.segment<3>(6)};
}

Mat5 SE23::matrix() const {
  Mat5 m = Mat5::Identity();
  m.block<3, 3>(0, 0) = r.matrix();
  m.block<3, 1>(0, 3) = v;
  m.block<3, 1>(0, 4) = p;
  return m;
}

SE23 SE23::from_matrix(const Mat5& m) {
  return {Rot3(m.block<3, 3>(0, 0)), m.block<3, 1>(0, 3), m.block<3, 1>(0, 4)};
}

SE23 se23_compose(const SE23& a, const SE23& b) {
  return {a.r * b.r, a.r * b.v + a.v, a.r * b.p + a.p};
}

SE23 se23_inverse(const SE23& a) {
  const Rot3 rt = a.r.inverse();
  return {rt, -(rt * a.v), -(rt * a.p)};
}

Mat5 se23_hat(const TangentSE23& xi) {
  Mat5 m = Mat5::Zero();
  m.block<3, 3>(0, 0) = skew(xi.dtheta);
  m.block<3, 1>(0, 3) = xi.dv;
  m.block<3, 1>(0, 4) = xi.dp;
  return m;
}

TangentSE23 se23_vee(const Mat5& m) {
  return {unskew(m.block<3, 3>(0, 0)), m.block<3, 1>(0, 3), m.block<3, 1>(0, 4)};
}

SE23 se23_exp(const TangentSE23& xi) {
  const Mat3 J = so3_left_jacobian(xi.dtheta);
  return {so3_exp(xi.dtheta), J * xi.dv, J * xi.dp};
}

TangentSE23 se23_log(const SE23& x) {
  const Vec3 theta = so3_log(x.r);
  const Mat3 Jinv = so3_left_jacobian_inv(theta);
  return {theta, Jinv * x.v, Jinv * x.p};
}

Mat9 se23_left_jacobian(const TangentSE23& xi) {
  const Mat3 J = so3_left_jacobian(xi.dtheta);
  Mat9 out = Mat9::Zero();
  out.block<3, 3>(0, 0) = J;
  out.block<3, 3>(3, 3) = J;
  out.block<3, 3>(6, 6) = J;
  out.block<3, 3>(3, 0) = q_block(xi.dv, xi.dtheta);
  out.block<3, 3>(6, 0) = q_block(xi.dp, xi.dtheta);
  return out;
}

Mat9 se23_left_jacobian_inv(const TangentSE23& xi) {
  const Mat3 Jinv = so3_left_jacobian_inv(xi.dtheta);
  Mat9 out = Mat9::Zero();
  out.block<3, 3>(0, 0) = Jinv;
  out.block<3, 3>(3, 3) = Jinv;
  out.block<3, 3>(6, 6) = Jinv;
  out.block<3, 3>(3, 0) = -Jinv * q_block(xi.dv, xi.dtheta) * Jinv;
  out.block<3, 3>(6, 0) = -Jinv * q_block(xi.dp, xi.dtheta) * Jinv;
  return out;
}

Mat9 se23_adjoint(const SE23& x) {
  const Mat3& R = x.r.matrix();
  Mat9 ad = Mat9::Zero();
  ad.block<3, 3>(0, 0) = R;
  ad.block<3, 3>(3, 3) = R;
  ad.block<3, 3>(6, 6) = R;
  ad.block<3, 3>(3, 0) = skew(x.v) * R;
  ad.block<3, 3>(6, 0) = skew(x.p) * R;
  return ad;
}

}  // namespace rifls::lie
