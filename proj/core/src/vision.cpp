#include "rifls/vision.hpp"

#include <algorithm>
#include <cmath>

#include "rifls/error.hpp"

namespace rifls {

using lie::skew;

Mat3 CameraModel::default_r_bc() {
  Mat3 r;
  // columns: camera x, y, z axes expressed in the body frame
  r.col(0) = Vec3(0.0, -1.0, 0.0);
  r.col(1) = Vec3(0.0, 0.0, -1.0);
  r.col(2) = Vec3(1.0, 0.0, 0.0);
  return r;
}

void CameraModel::validate() const {
  if (!(fx > 0.0 && fy > 0.0 && cx > 0.0 && cx < width && cy > 0.0 && cy < height)) {
    throw Error(ErrorCode::InvalidConfig, "camera intrinsics out of range");
  }
  if (!lie::Rot3(r_bc).is_valid(1e-9)) {
    throw Error(ErrorCode::InvalidConfig, "camera extrinsic rotation is not a rotation");
  }
}

bool CameraModel::in_bounds(const Vec2& uv, double margin) const {
  return uv.x() >= margin && uv.x() <= width - margin && uv.y() >= margin &&
         uv.y() <= height - margin;
}

Vec3 CameraModel::bearing(const Vec2& uv) const {
  return Vec3((uv.x() - cx) / fx, (uv.y() - cy) / fy, 1.0);
}

namespace {

struct Chain {
  Vec3 c;    // anchor body-frame point times rho: r_bc m + rho t_bc
  Vec3 fw;   // world point times rho
  Vec3 fb;   // observer body point times rho
  Vec3 pc;   // observer camera point times rho
};

Chain chain(const CameraModel& cam, const SystemState& x_i, const SystemState& x_a,
            const InverseDepthLandmark& f) {
  Chain ch;
  const Vec3 m(f.alpha, f.beta, 1.0);
  ch.c = cam.r_bc * m + f.rho * cam.t_bc;
  ch.fw = x_a.R() * ch.c + f.rho * x_a.p();
  ch.fb = x_i.R().transpose() * (ch.fw - f.rho * x_i.p());
  ch.pc = cam.r_bc.transpose() * (ch.fb - f.rho * cam.t_bc);
  return ch;
}

Mat23 projection_jacobian(const CameraModel& cam, const Vec3& pc) {
  const double iz = 1.0 / pc.z();
  Mat23 j;
  j << cam.fx * iz, 0.0, -cam.fx * pc.x() * iz * iz,  //
      0.0, cam.fy * iz, -cam.fy * pc.y() * iz * iz;
  return j;
}

Vec2 pinhole(const CameraModel& cam, const Vec3& pc) {
  return Vec2(cam.fx * pc.x() / pc.z() + cam.cx, cam.fy * pc.y() / pc.z() + cam.cy);
}

void check_depth(const Vec3& pc) {
  if (!(pc.z() > kMinDepth)) {
    throw Error(ErrorCode::BehindCamera, "landmark depth " + std::to_string(pc.z()));
  }
}

}  // namespace

Vec3 landmark_in_camera(const CameraModel& cam, const SystemState& x_i, const SystemState& x_a,
                        const InverseDepthLandmark& f) {
  const Vec3 pc = chain(cam, x_i, x_a, f).pc;
  check_depth(pc);
  return pc;
}

Vec2 project(const CameraModel& cam, const SystemState& x_i, const SystemState& x_a,
             const InverseDepthLandmark& f) {
  return pinhole(cam, landmark_in_camera(cam, x_i, x_a, f));
}

Vec2 reprojection_residual(const CameraModel& cam, const SystemState& x_i, const SystemState& x_a,
                           const InverseDepthLandmark& f, const Observation& z) {
  return project(cam, x_i, x_a, f) - z.uv;
}

ReprojectionJacobians reprojection_jacobians(ErrorFormulation form, const CameraModel& cam,
                                             const SystemState& x_i, const SystemState& x_a,
                                             const InverseDepthLandmark& f, bool same_frame) {
  const Chain ch = chain(cam, x_i, x_a, f);
  check_depth(ch.pc);
  const Mat23 jh = projection_jacobian(cam, ch.pc);
  const Mat3 ri_t = x_i.R().transpose();
  const Mat23 jb = jh * cam.r_bc.transpose();  // d pixel / d observer-body point
  const Mat23 jw = jb * ri_t;                   // d pixel / d world point

  ReprojectionJacobians out;
  out.same_frame = same_frame;
  if (!same_frame) {
    if (form == ErrorFormulation::Traditional) {
      out.pi_i.block<2, 3>(0, 0) = jw * skew(ch.fw - f.rho * x_i.p());
      out.pi_a.block<2, 3>(0, 0) = -jw * skew(x_a.R() * ch.c);
    } else {
      out.pi_i.block<2, 3>(0, 0) = jw * skew(ch.fw);
      out.pi_a.block<2, 3>(0, 0) = -jw * skew(ch.fw);
    }
    out.pi_i.block<2, 3>(0, 6) = -f.rho * jw;
    out.pi_a.block<2, 3>(0, 6) = f.rho * jw;
  }

  const Mat3 ra_rbc = x_a.R() * cam.r_bc;
  out.f.col(0) = jw * ra_rbc.col(0);
  out.f.col(1) = jw * ra_rbc.col(1);
  if (same_frame) {
    out.f.col(2).setZero();
  } else {
    out.f.col(2) = jw * (x_a.R() * cam.t_bc + x_a.p() - x_i.p()) - jh * cam.r_bc.transpose() * cam.t_bc;
  }
  return out;
}

namespace {

struct Ray {
  Vec3 origin;
  Vec3 dir;
};

Ray world_ray(const CameraModel& cam, const SystemState& x, const Vec2& uv) {
  return {x.p() + x.R() * cam.t_bc, x.R() * cam.r_bc * cam.bearing(uv)};
}

double angle_between(const Vec3& a, const Vec3& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

}  // namespace

double ray_angle(const CameraModel& cam, const SystemState& x_a, const SystemState& x_o,
                 const Vec2& uv_a, const Vec2& uv_o) {
  return angle_between(world_ray(cam, x_a, uv_a).dir, world_ray(cam, x_o, uv_o).dir);
}

InverseDepthLandmark initialize_landmark(const CameraModel& cam, const SystemState& anchor,
                                         const SystemState& observer, const Vec2& uv_anchor,
                                         const Vec2& uv_observer, double min_angle) {
  const Ray ra = world_ray(cam, anchor, uv_anchor);
  const Ray ro = world_ray(cam, observer, uv_observer);
  const double angle = angle_between(ra.dir, ro.dir);
  if (!(angle >= min_angle) || angle == 0.0) {
    throw Error(ErrorCode::LowDisparity, "ray angle " + std::to_string(angle));
  }

  // Closest points o_a + s d_a and o_o + t d_o.
  const Vec3 w = ra.origin - ro.origin;
  const double a = ra.dir.dot(ra.dir);
  const double b = ra.dir.dot(ro.dir);
  const double c = ro.dir.dot(ro.dir);
  const double d = ra.dir.dot(w);
  const double e = ro.dir.dot(w);
  const double den = a * c - b * b;
  const double s = (b * e - c * d) / den;
  const double t = (a * e - b * d) / den;
  const Vec3 mid = 0.5 * ((ra.origin + s * ra.dir) + (ro.origin + t * ro.dir));

  const Vec3 pc = cam.r_bc.transpose() * (anchor.R().transpose() * (mid - anchor.p()) - cam.t_bc);
  const Vec3 m = cam.bearing(uv_anchor);
  InverseDepthLandmark f;
  f.alpha = m.x();
  f.beta = m.y();
  f.rho = pc.z() > 0.0 ? std::clamp(1.0 / pc.z(), kMinInverseDepth, kMaxInverseDepth)
                       : kMinInverseDepth;
  return f;
}

bool disparity_gate(const CameraModel& cam, const std::vector<TrackView>& track, double min_angle) {
  if (track.size() < 2) return false;
  std::vector<Vec3> dirs;
  dirs.reserve(track.size());
  for (const TrackView& v : track) dirs.push_back(world_ray(cam, *v.pose, v.uv).dir);
  for (size_t i = 0; i < dirs.size(); ++i) {
    for (size_t j = i + 1; j < dirs.size(); ++j) {
      if (angle_between(dirs[i], dirs[j]) >= min_angle) return true;
    }
  }
  return false;
}

}  // namespace rifls
