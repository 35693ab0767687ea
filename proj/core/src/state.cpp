#include "rifls/state.hpp"

#include <string>

#include "rifls/error.hpp"

namespace rifls {

using lie::skew;

std::string_view to_string(ErrorFormulation f) {
  return f == ErrorFormulation::Traditional ? "traditional" : "right_invariant";
}

ErrorFormulation formulation_from_string(std::string_view name) {
  if (name == "traditional") return ErrorFormulation::Traditional;
  if (name == "right_invariant") return ErrorFormulation::RightInvariant;
  throw Error(ErrorCode::InvalidConfig, "unknown error formulation '" + std::string(name) + "'");
}

ErrorVector error(ErrorFormulation f, const SystemState& x, const SystemState& xbar) {
  ErrorVector dx;
  if (f == ErrorFormulation::Traditional) {
    if (x.R() == xbar.R()) {
      dx.segment<3>(0).setZero();
    } else {
      dx.segment<3>(0) = lie::so3_log(x.nav.r * xbar.nav.r.inverse());
    }
    dx.segment<3>(3) = x.nav.v - xbar.nav.v;
    dx.segment<3>(6) = x.nav.p - xbar.nav.p;
  } else if (x.R() == xbar.R() && x.v() == xbar.v() && x.p() == xbar.p()) {
    dx.head<9>().setZero();
  } else {
    dx.head<9>() = lie::se23_log(x.nav * lie::se23_inverse(xbar.nav)).vector();
  }
  dx.segment<3>(9) = x.bias_g - xbar.bias_g;
  dx.segment<3>(12) = x.bias_a - xbar.bias_a;
  return dx;
}

SystemState retract(ErrorFormulation f, const SystemState& xbar, const ErrorVector& dx) {
  SystemState x = xbar;
  if (f == ErrorFormulation::Traditional) {
    x.nav.r = lie::so3_exp(dx.segment<3>(0)) * xbar.nav.r;
    x.nav.v = xbar.nav.v + dx.segment<3>(3);
    x.nav.p = xbar.nav.p + dx.segment<3>(6);
  } else {
    x.nav = lie::se23_exp(lie::TangentSE23::from_vector(dx.head<9>())) * xbar.nav;
  }
  if (x.nav.r.orthonormality_defect() > 1e-9) x.nav.r = x.nav.r.normalized();
  x.bias_g = xbar.bias_g + dx.segment<3>(9);
  x.bias_a = xbar.bias_a + dx.segment<3>(12);
  return x;
}

SystemState gauge_transform(const GaugeTransform& xi, const SystemState& x) {
  const lie::Rot3 rg = lie::so3_exp(kGravityAxis * xi.dphi);
  SystemState y = x;
  y.nav.r = rg * x.nav.r;
  y.nav.v = rg * x.nav.v;
  y.nav.p = rg * x.nav.p + xi.dt;
  return y;
}

Mat15x4 nullspace_block(ErrorFormulation f, const SystemState& xbar) {
  Mat15x4 n = Mat15x4::Zero();
  n.block<3, 1>(0, 0) = kGravityAxis;
  n.block<3, 3>(6, 1) = Mat3::Identity();
  if (f == ErrorFormulation::Traditional) {
    n.block<3, 1>(3, 0) = -skew(xbar.nav.v) * kGravityAxis;
    n.block<3, 1>(6, 0) = -skew(xbar.nav.p) * kGravityAxis;
  }
  return n;
}

}  // namespace rifls
