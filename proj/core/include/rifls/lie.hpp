#pragma once

// SO(3) and SE_2(3) primitives. Rotations are kept as 3x3 matrices; an
// SE_2(3) element is the 5x5 block matrix
//
//   | R  v  p |
//   | 0  1  0 |
//   | 0  0  1 |
//
// and its tangent vector is ordered (dtheta, dv, dp).

#include "rifls/types.hpp"

namespace rifls::lie {

// Below this angle the trigonometric coefficients of exp/log/J_l switch to
// their Taylor expansions.
inline constexpr double kSmallAngle = 1e-7;

// Fourth- and fifth-order coefficients of the SE_2(3) Jacobian cancel much
// earlier than the SO(3) ones, so they use their series below this angle.
inline constexpr double kSmallAngleHighOrder = 1e-2;

// Logarithms refuse rotations this close to pi.
inline constexpr double kLogAngleMargin = 1e-6;

Mat3 skew(const Vec3& v);
Vec3 unskew(const Mat3& m);

class Rot3 {
 public:
  Rot3() : m_(Mat3::Identity()) {}
  explicit Rot3(const Mat3& m) : m_(m) {}

  static Rot3 identity() { return Rot3(); }

  const Mat3& matrix() const { return m_; }

  Rot3 operator*(const Rot3& other) const { return Rot3(m_ * other.m_); }
  Vec3 operator*(const Vec3& v) const { return m_ * v; }
  Rot3 inverse() const { return Rot3(m_.transpose()); }

  // max |R^T R - I| entry
  double orthonormality_defect() const;
  bool is_valid(double tol = 1e-9) const;

  // Nearest rotation in the Frobenius sense (polar decomposition).
  Rot3 normalized() const;

 private:
  Mat3 m_;
};

Rot3 so3_exp(const Vec3& w);
// Throws Error(AngleNearPi) when the rotation angle exceeds pi - kLogAngleMargin.
Vec3 so3_log(const Rot3& r);
double rotation_angle(const Rot3& r);

Mat3 so3_left_jacobian(const Vec3& w);
Mat3 so3_left_jacobian_inv(const Vec3& w);
inline Mat3 so3_right_jacobian(const Vec3& w) { return so3_left_jacobian(-w); }

struct TangentSE23 {
  Vec3 dtheta = Vec3::Zero();
  Vec3 dv = Vec3::Zero();
  Vec3 dp = Vec3::Zero();

  Vec9 vector() const;
  static TangentSE23 from_vector(const Vec9& xi);
  static TangentSE23 zero() { return {}; }
};

struct SE23 {
  Rot3 r;
  Vec3 v = Vec3::Zero();
  Vec3 p = Vec3::Zero();

  static SE23 identity() { return {}; }

  Mat5 matrix() const;
  static SE23 from_matrix(const Mat5& m);
};

SE23 se23_compose(const SE23& a, const SE23& b);
SE23 se23_inverse(const SE23& a);
inline SE23 operator*(const SE23& a, const SE23& b) { return se23_compose(a, b); }

// Lie-algebra embedding L(xi) and its inverse.
Mat5 se23_hat(const TangentSE23& xi);
TangentSE23 se23_vee(const Mat5& m);

SE23 se23_exp(const TangentSE23& xi);
TangentSE23 se23_log(const SE23& x);

// 9x9 left Jacobian: exp(xi + d) ~= exp(J_l(xi) d) exp(xi).
Mat9 se23_left_jacobian(const TangentSE23& xi);
Mat9 se23_left_jacobian_inv(const TangentSE23& xi);

// 9x9 adjoint matrix Ad_X, so that X exp(xi) X^-1 = exp(Ad_X xi).
Mat9 se23_adjoint(const SE23& x);

}  // namespace rifls::lie
