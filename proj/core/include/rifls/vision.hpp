#pragma once

#include <optional>
#include <vector>

#include "rifls/lie.hpp"
#include "rifls/state.hpp"
#include "rifls/types.hpp"

namespace rifls {

// Pinhole camera rigidly mounted on the body. T_BC maps camera coordinates
// into the body frame: x_B = r_bc * x_C + t_bc.
struct CameraModel {
  double fx = 460.0;
  double fy = 460.0;
  double cx = 376.0;
  double cy = 240.0;
  int width = 752;
  int height = 480;
  Mat3 r_bc = default_r_bc();
  Vec3 t_bc = Vec3::Zero();

  // Camera looks along body +x; image x along body -y, image y along body -z.
  static Mat3 default_r_bc();

  void validate() const;
  bool in_bounds(const Vec2& uv, double margin = 0.0) const;
  Vec3 bearing(const Vec2& uv) const;  // (x/z, y/z, 1)
};

struct Observation {
  FrameId frame = 0;
  LandmarkId landmark = 0;
  Vec2 uv = Vec2::Zero();
  double sigma = 1.0;
};

inline constexpr double kMinDepth = 1e-6;
inline constexpr double kMinInverseDepth = 1e-3;
inline constexpr double kMaxInverseDepth = 10.0;

// Landmark point in the observing camera frame (scaled by rho, i.e. homogeneous
// first three components). Throws BehindCamera when its depth is <= kMinDepth.
Vec3 landmark_in_camera(const CameraModel& cam, const SystemState& x_i, const SystemState& x_a,
                        const InverseDepthLandmark& f);

Vec2 project(const CameraModel& cam, const SystemState& x_i, const SystemState& x_a,
             const InverseDepthLandmark& f);

Vec2 reprojection_residual(const CameraModel& cam, const SystemState& x_i, const SystemState& x_a,
                           const InverseDepthLandmark& f, const Observation& z);

struct ReprojectionJacobians {
  Mat29 pi_i = Mat29::Zero();  // observing nav state (dtheta, dv, dp)
  Mat29 pi_a = Mat29::Zero();  // anchor nav state
  Mat23 f = Mat23::Zero();     // (dalpha, dbeta, drho)
  bool same_frame = false;
};

// `same_frame` must be set when observer and anchor are the same variable; the
// pose Jacobians are then exactly zero.
ReprojectionJacobians reprojection_jacobians(ErrorFormulation form, const CameraModel& cam,
                                             const SystemState& x_i, const SystemState& x_a,
                                             const InverseDepthLandmark& f, bool same_frame);

// Angle between the two world-frame viewing rays of a pixel pair.
double ray_angle(const CameraModel& cam, const SystemState& x_a, const SystemState& x_o,
                 const Vec2& uv_a, const Vec2& uv_o);

// (alpha, beta) from the anchor pixel; rho from midpoint triangulation,
// clamped to [kMinInverseDepth, kMaxInverseDepth]. Throws LowDisparity when the
// ray angle is below `min_angle` (rad).
InverseDepthLandmark initialize_landmark(const CameraModel& cam, const SystemState& anchor,
                                         const SystemState& observer, const Vec2& uv_anchor,
                                         const Vec2& uv_observer, double min_angle);

struct TrackView {
  const SystemState* pose;
  Vec2 uv;
};

// True iff the track has >= 2 views and some pair subtends >= min_angle.
bool disparity_gate(const CameraModel& cam, const std::vector<TrackView>& track, double min_angle);

}  // namespace rifls
