#pragma once

#include <cstdint>
#include <string_view>

#include "rifls/lie.hpp"
#include "rifls/types.hpp"

namespace rifls {

// World gravity; the world z axis points up so gravity points along -z.
inline const Vec3 kGravity(0.0, 0.0, -9.81);
// Unit axis used for the rotation-about-gravity gauge direction.
inline const Vec3 kGravityAxis(0.0, 0.0, -1.0);

using FrameId = std::int64_t;
using LandmarkId = std::int64_t;

struct SystemState {
  lie::SE23 nav;
  Vec3 bias_g = Vec3::Zero();
  Vec3 bias_a = Vec3::Zero();
  double stamp = 0.0;

  const Mat3& R() const { return nav.r.matrix(); }
  const Vec3& v() const { return nav.v; }
  const Vec3& p() const { return nav.p; }
};

// Landmark as [alpha, beta, 1, rho] in the camera frame of its anchor.
struct InverseDepthLandmark {
  double alpha = 0.0;
  double beta = 0.0;
  double rho = 1.0;
  FrameId anchor = 0;

  Vec3 params() const { return Vec3(alpha, beta, rho); }
  Vec4 homogeneous() const { return Vec4(alpha, beta, 1.0, rho); }
};

// Stacked 15-vector (dtheta, dv, dp, dbg, dba).
using ErrorVector = Vec15;

enum class ErrorFormulation { Traditional, RightInvariant };

std::string_view to_string(ErrorFormulation f);
ErrorFormulation formulation_from_string(std::string_view name);

// World-frame re-expression by a rotation dphi about gravity and a shift dt.
struct GaugeTransform {
  double dphi = 0.0;
  Vec3 dt = Vec3::Zero();
};

// eta(x, xbar). Traditional: (log(R Rbar^T), v - vbar, p - pbar, b - bbar).
// RightInvariant: (log(X Xbar^-1), b - bbar).
ErrorVector error(ErrorFormulation f, const SystemState& x, const SystemState& xbar);

// eta^-1(xbar, dx); the stamp is taken from xbar.
SystemState retract(ErrorFormulation f, const SystemState& xbar, const ErrorVector& dx);

SystemState gauge_transform(const GaugeTransform& xi, const SystemState& x);

// d eta(T_xi(x), xbar) / d xi at xi = 0, x = xbar. Columns: (dphi, dt).
Mat15x4 nullspace_block(ErrorFormulation f, const SystemState& xbar);

}  // namespace rifls
