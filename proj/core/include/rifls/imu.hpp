#pragma once

#include <span>
#include <vector>

#include "rifls/state.hpp"
#include "rifls/types.hpp"

namespace rifls {

struct ImuSample {
  double stamp = 0.0;
  Vec3 gyro = Vec3::Zero();
  Vec3 accel = Vec3::Zero();
};

// Continuous-time noise densities; `rate` is the sampling frequency f.
struct ImuNoiseConfig {
  double sigma_g = 1.2e-3;   // rad/s/sqrt(Hz)
  double sigma_a = 8e-3;     // m/s^2/sqrt(Hz)
  double sigma_bg = 2e-5;    // rad/s^2/sqrt(Hz)
  double sigma_ba = 5.5e-5;  // m/s^3/sqrt(Hz)
  double rate = 100.0;       // Hz

  void validate() const;
};

struct PropagationResult {
  SystemState state;
  Mat15 phi = Mat15::Identity();
  Mat15 cov = Mat15::Zero();
};

enum class ImuJacobianMode { Exact, IdentityApprox };

// Integrates x_i with RK4, one step per sample interval, from x_i.stamp to
// t_end. Inputs inside an interval come from cubic Lagrange interpolation over
// the neighbouring samples, so samples slightly outside [x_i.stamp, t_end]
// improve accuracy at the ends. Biases of x_i are held fixed.
PropagationResult propagate(const SystemState& x_i, std::span<const ImuSample> samples,
                            double t_end, const ImuNoiseConfig& noise, ErrorFormulation f);

// State-only variant without transition or covariance bookkeeping.
SystemState propagate_state(const SystemState& x_i, std::span<const ImuSample> samples,
                            double t_end);

// Same, ending at the last sample stamp.
PropagationResult propagate(const SystemState& x_i, std::span<const ImuSample> samples,
                            const ImuNoiseConfig& noise, ErrorFormulation f);

// Nav block of the transition matrix between two states dt apart.
// RightInvariant ignores the states; Traditional uses the endpoint velocity and
// position differences.
Mat9 nav_transition(ErrorFormulation f, const SystemState& from, const SystemState& to, double dt);

// Full single-step transition for a small interval starting at x under bias
// corrected inputs (gyro, accel), with the bias coupling block integrated over
// the step. Also returns the updated state through `x_next` when non-null.
Mat15 transition_matrix(ErrorFormulation f, const SystemState& x, const Vec3& gyro,
                        const Vec3& accel, double dt, SystemState* x_next = nullptr);

inline ErrorVector imu_residual(ErrorFormulation f, const SystemState& x_i,
                                const SystemState& x_pred) {
  return error(f, x_i, x_pred);
}

struct ImuResidualJacobians {
  Mat15 a_i;
  Mat15 a_pred;
};

ImuResidualJacobians imu_residual_jacobians(ErrorFormulation f, ImuJacobianMode mode,
                                            const SystemState& x_i, const SystemState& x_pred);

struct ProcessNoiseWeight {
  Mat15 cov;
  Mat15 sqrt_info;  // symmetric inverse square root of cov
  bool regularized = false;
};

// A_pred * cov * A_pred^T. When the smallest eigenvalue falls below 1e-15 the
// result is regularized by 1e-12 I and flagged.
ProcessNoiseWeight process_noise_weight(const PropagationResult& prop, const Mat15& a_pred);

// Samples with stamps in [t0 - eps, t1 + eps], plus `pad` extra samples on
// each side when available.
std::vector<ImuSample> slice_samples(std::span<const ImuSample> samples, double t0, double t1,
                                     int pad = 0);

}  // namespace rifls
