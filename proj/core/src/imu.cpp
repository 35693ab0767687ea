#include "rifls/imu.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <string>

#include "rifls/error.hpp"

namespace rifls {

using lie::skew;

namespace {

constexpr double kStampEps = 1e-9;

struct Nav {
  Mat3 R;
  Vec3 v;
  Vec3 p;
};

struct NavRate {
  Mat3 dR;
  Vec3 dv;
  Vec3 dp;
};

NavRate nav_rate(const Nav& x, const Vec3& w, const Vec3& a) {
  return {x.R * skew(w), x.R * a + kGravity, x.v};
}

Nav nav_add(const Nav& x, const NavRate& k, double h) {
  return {x.R + h * k.dR, x.v + h * k.dv, x.p + h * k.dp};
}

struct Inputs {
  Vec3 w;
  Vec3 a;
};

Nav rk4_step(const Nav& x, const Inputs& u0, const Inputs& um, const Inputs& u1, double h) {
  const NavRate k1 = nav_rate(x, u0.w, u0.a);
  const NavRate k2 = nav_rate(nav_add(x, k1, 0.5 * h), um.w, um.a);
  const NavRate k3 = nav_rate(nav_add(x, k2, 0.5 * h), um.w, um.a);
  const NavRate k4 = nav_rate(nav_add(x, k3, h), u1.w, u1.a);
  Nav out;
  out.R = x.R + (h / 6.0) * (k1.dR + 2.0 * k2.dR + 2.0 * k3.dR + k4.dR);
  out.v = x.v + (h / 6.0) * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv);
  out.p = x.p + (h / 6.0) * (k1.dp + 2.0 * k2.dp + 2.0 * k3.dp + k4.dp);
  lie::Rot3 r(out.R);
  if (r.orthonormality_defect() > 1e-10) out.R = r.normalized().matrix();
  return out;
}

// Lagrange interpolation through up to four samples around interval k.
Inputs interpolate(std::span<const ImuSample> s, size_t k, double t) {
  const size_t lo = k > 0 ? k - 1 : 0;
  const size_t hi = std::min(s.size() - 1, k + 2);
  Inputs out{Vec3::Zero(), Vec3::Zero()};
  for (size_t i = lo; i <= hi; ++i) {
    double w = 1.0;
    for (size_t j = lo; j <= hi; ++j) {
      if (j != i) w *= (t - s[j].stamp) / (s[i].stamp - s[j].stamp);
    }
    out.w += w * s[i].gyro;
    out.a += w * s[i].accel;
  }
  return out;
}

// Nav block of the transition from time tau to the step end, for either error.
Mat9 nav_block(ErrorFormulation f, const Nav& from, const Nav& to, double s) {
  Mat9 m = Mat9::Identity();
  m.block<3, 3>(6, 3) = Mat3::Identity() * s;
  if (f == ErrorFormulation::RightInvariant) {
    const Mat3 G = skew(kGravity);
    m.block<3, 3>(3, 0) = G * s;
    m.block<3, 3>(6, 0) = G * (0.5 * s * s);
  } else {
    m.block<3, 3>(3, 0) = -skew(to.v - from.v - kGravity * s);
    m.block<3, 3>(6, 0) = -skew(to.p - from.p - from.v * s - 0.5 * kGravity * s * s);
  }
  return m;
}

// Instantaneous map from (gyro bias, accel bias) perturbations to the error rate.
Mat96 bias_input(ErrorFormulation f, const Nav& x) {
  Mat96 b = Mat96::Zero();
  b.block<3, 3>(0, 0) = -x.R;
  b.block<3, 3>(3, 3) = -x.R;
  if (f == ErrorFormulation::RightInvariant) {
    b.block<3, 3>(3, 0) = -skew(x.v) * x.R;
    b.block<3, 3>(6, 0) = -skew(x.p) * x.R;
  }
  return b;
}

struct StepLinearization {
  Nav next;
  Mat15 phi;
  Mat96 g;
};

StepLinearization linearize_step(ErrorFormulation f, const Nav& x, const Inputs& u0,
                                 const Inputs& um, const Inputs& u1, double h) {
  StepLinearization out;
  out.next = rk4_step(x, u0, um, u1, h);
  const Nav& y = out.next;

  // Midpoint by Hermite interpolation of the translational states and a
  // midpoint rule over the first half of the rotation.
  Nav mid;
  mid.R = x.R * lie::so3_exp((0.5 * u0.w + 0.5 * um.w) * (0.5 * h)).matrix();
  const Vec3 acc0 = x.R * u0.a + kGravity;
  const Vec3 acc1 = y.R * u1.a + kGravity;
  mid.v = 0.5 * (x.v + y.v) + (h / 8.0) * (acc0 - acc1);
  mid.p = 0.5 * (x.p + y.p) + (h / 8.0) * (x.v - y.v);

  auto integrand = [&](const Nav& at, double remaining) {
    return Mat96(nav_block(f, at, y, remaining) * bias_input(f, at));
  };
  out.g = (h / 6.0) * (integrand(x, h) + 4.0 * integrand(mid, 0.5 * h) + integrand(y, 0.0));

  out.phi = Mat15::Identity();
  out.phi.block<9, 9>(0, 0) = nav_block(f, x, y, h);
  out.phi.block<9, 6>(0, 9) = out.g;
  return out;
}

Nav to_nav(const SystemState& x) { return {x.R(), x.v(), x.p()}; }

void assign_nav(SystemState& x, const Nav& n) {
  const lie::Rot3 r(n.R);
  x.nav.r = r.orthonormality_defect() > 1e-13 ? r.normalized() : r;
  x.nav.v = n.v;
  x.nav.p = n.p;
}

}  // namespace

void ImuNoiseConfig::validate() const {
  if (!(sigma_g > 0.0 && sigma_a > 0.0 && sigma_bg > 0.0 && sigma_ba > 0.0 && rate > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "IMU noise parameters must be strictly positive");
  }
}

PropagationResult propagate(const SystemState& x_i, std::span<const ImuSample> samples,
                            double t_end, const ImuNoiseConfig& noise, ErrorFormulation f) {
  if (samples.empty()) throw Error(ErrorCode::EmptySampleWindow, "no IMU samples");
  for (size_t k = 1; k < samples.size(); ++k) {
    if (!(samples[k].stamp > samples[k - 1].stamp)) {
      throw Error(ErrorCode::NonMonotoneStamps,
                  "IMU stamps not increasing at index " + std::to_string(k));
    }
  }
  const double t0 = x_i.stamp;
  if (t_end < t0 - kStampEps) {
    throw Error(ErrorCode::NonMonotoneStamps, "propagation end precedes the start stamp");
  }
  if (samples.front().stamp > t0 + kStampEps || samples.back().stamp < t_end - kStampEps) {
    throw Error(ErrorCode::EmptySampleWindow, "IMU samples do not cover the propagation window");
  }

  PropagationResult out;
  out.state = x_i;
  Nav nav = to_nav(x_i);

  const double qg = noise.sigma_g * noise.sigma_g * noise.rate;
  const double qa = noise.sigma_a * noise.sigma_a * noise.rate;
  const double qbg = noise.sigma_bg * noise.sigma_bg;
  const double qba = noise.sigma_ba * noise.sigma_ba;

  auto corrected = [&](size_t k, double t) {
    Inputs u = interpolate(samples, k, t);
    u.w -= x_i.bias_g;
    u.a -= x_i.bias_a;
    return u;
  };

  for (size_t k = 0; k + 1 < samples.size(); ++k) {
    const double a_start = std::max(samples[k].stamp, t0);
    const double a_end = std::min(samples[k + 1].stamp, t_end);
    const double h = a_end - a_start;
    if (h <= kStampEps) continue;
    const StepLinearization step =
        linearize_step(f, nav, corrected(k, a_start), corrected(k, a_start + 0.5 * h),
                       corrected(k, a_end), h);

    out.phi = step.phi * out.phi;
    Mat15 cov = step.phi * out.cov * step.phi.transpose();
    const Mat96& g = step.g;
    cov.block<9, 9>(0, 0) += qg * g.leftCols<3>() * g.leftCols<3>().transpose() +
                             qa * g.rightCols<3>() * g.rightCols<3>().transpose();
    cov.block<3, 3>(9, 9).diagonal().array() += qbg * h;
    cov.block<3, 3>(12, 12).diagonal().array() += qba * h;
    out.cov = 0.5 * (cov + cov.transpose());
    nav = step.next;
  }
  assign_nav(out.state, nav);
  out.state.stamp = std::max(t0, t_end);
  return out;
}

PropagationResult propagate(const SystemState& x_i, std::span<const ImuSample> samples,
                            const ImuNoiseConfig& noise, ErrorFormulation f) {
  if (samples.empty()) throw Error(ErrorCode::EmptySampleWindow, "no IMU samples");
  return propagate(x_i, samples, samples.back().stamp, noise, f);
}

SystemState propagate_state(const SystemState& x_i, std::span<const ImuSample> samples,
                            double t_end) {
  if (samples.empty()) throw Error(ErrorCode::EmptySampleWindow, "no IMU samples");
  const double t0 = x_i.stamp;
  if (samples.front().stamp > t0 + kStampEps || samples.back().stamp < t_end - kStampEps) {
    throw Error(ErrorCode::EmptySampleWindow, "IMU samples do not cover the propagation window");
  }
  Nav nav = to_nav(x_i);
  auto corrected = [&](size_t k, double t) {
    Inputs u = interpolate(samples, k, t);
    u.w -= x_i.bias_g;
    u.a -= x_i.bias_a;
    return u;
  };
  for (size_t k = 0; k + 1 < samples.size(); ++k) {
    const double a_start = std::max(samples[k].stamp, t0);
    const double a_end = std::min(samples[k + 1].stamp, t_end);
    const double h = a_end - a_start;
    if (h <= kStampEps) continue;
    nav = rk4_step(nav, corrected(k, a_start), corrected(k, a_start + 0.5 * h),
                   corrected(k, a_end), h);
  }
  SystemState out = x_i;
  assign_nav(out, nav);
  out.stamp = std::max(t0, t_end);
  return out;
}

Mat9 nav_transition(ErrorFormulation f, const SystemState& from, const SystemState& to, double dt) {
  return nav_block(f, to_nav(from), to_nav(to), dt);
}

Mat15 transition_matrix(ErrorFormulation f, const SystemState& x, const Vec3& gyro,
                        const Vec3& accel, double dt, SystemState* x_next) {
  const Inputs u{gyro, accel};
  const StepLinearization step = linearize_step(f, to_nav(x), u, u, u, dt);
  if (x_next) {
    *x_next = x;
    assign_nav(*x_next, step.next);
    x_next->stamp = x.stamp + dt;
  }
  return step.phi;
}

ImuResidualJacobians imu_residual_jacobians(ErrorFormulation f, ImuJacobianMode mode,
                                            const SystemState& x_i, const SystemState& x_pred) {
  ImuResidualJacobians out{Mat15::Identity(), -Mat15::Identity()};
  if (mode == ImuJacobianMode::IdentityApprox) return out;
  const ErrorVector r = imu_residual(f, x_i, x_pred);
  if (f == ErrorFormulation::Traditional) {
    const Vec3 rt = r.head<3>();
    out.a_i.block<3, 3>(0, 0) = lie::so3_left_jacobian_inv(rt);
    out.a_pred.block<3, 3>(0, 0) = -lie::so3_left_jacobian_inv(-rt);
  } else {
    const Vec9 xi = r.head<9>();
    out.a_i.block<9, 9>(0, 0) = lie::se23_left_jacobian_inv(lie::TangentSE23::from_vector(xi));
    out.a_pred.block<9, 9>(0, 0) =
        -lie::se23_left_jacobian_inv(lie::TangentSE23::from_vector(-xi));
  }
  return out;
}

ProcessNoiseWeight process_noise_weight(const PropagationResult& prop, const Mat15& a_pred) {
  ProcessNoiseWeight out;
  Mat15 c = a_pred * prop.cov * a_pred.transpose();
  c = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Mat15> es(c);
  Vec15 ev = es.eigenvalues();
  if (ev.minCoeff() < 1e-15) {
    c.diagonal().array() += 1e-12;
    ev.array() += 1e-12;
    out.regularized = true;
  }
  out.cov = c;
  const Vec15 d = ev.cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  out.sqrt_info = es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
  return out;
}

std::vector<ImuSample> slice_samples(std::span<const ImuSample> samples, double t0, double t1,
                                     int pad) {
  const auto first = std::lower_bound(samples.begin(), samples.end(), t0 - kStampEps,
                                      [](const ImuSample& s, double t) { return s.stamp < t; });
  const auto last = std::upper_bound(samples.begin(), samples.end(), t1 + kStampEps,
                                     [](double t, const ImuSample& s) { return t < s.stamp; });
  const auto lo = std::distance(samples.begin(), first);
  const auto hi = std::distance(samples.begin(), last);
  const auto n = static_cast<std::ptrdiff_t>(samples.size());
  const auto b = std::max<std::ptrdiff_t>(0, lo - pad);
  const auto e = std::min<std::ptrdiff_t>(n, hi + pad);
  if (b >= e) return {};
  return std::vector<ImuSample>(samples.begin() + b, samples.begin() + e);
}

}  // namespace rifls
