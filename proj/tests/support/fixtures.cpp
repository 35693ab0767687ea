#include "fixtures.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <random>

#include "rifls/experiment.hpp"

namespace rifls::testing {

sim::SimConfig short_sim(double duration) {
  sim::SimConfig c;
  c.trajectory.duration = duration;
  return c;
}

sim::SimStream noiseless_stream(const sim::SimConfig& c, std::uint64_t seed) {
  sim::SimStream s = sim::simulate(c, seed);
  const sim::Scene scene = sim::generate_scene(c.scene, seed);
  for (ImuSample& z : s.imu) {
    const sim::TruthSample t = sim::sample_truth(c.trajectory, z.stamp);
    z.gyro = t.omega;
    z.accel = t.accel;
  }
  for (size_t k = 0; k < s.frames.size(); ++k) {
    SystemState& x = s.truth[k];
    x.bias_g.setZero();
    x.bias_a.setZero();
    for (Observation& z : s.frames[k].observations) {
      const Vec3& pw = scene.landmarks[s.track_landmark.at(z.landmark)];
      const Vec3 pc = c.camera.r_bc.transpose() * (x.R().transpose() * (pw - x.p()) - c.camera.t_bc);
      z.uv = Vec2(c.camera.fx * pc.x() / pc.z() + c.camera.cx,
                  c.camera.fy * pc.y() / pc.z() + c.camera.cy);
    }
  }
  return s;
}

SmootherConfig nullity_config(const sim::SimConfig& sim, ErrorFormulation f, bool fej,
                              ImuJacobianMode mode) {
  SmootherConfig c;
  c.formulation = f;
  c.fej = fej;
  c.imu_jac_mode = mode;
  c.initial_prior.enabled = false;
  return bind_sensors(c, sim);
}

WindowRunner::WindowRunner(const sim::SimStream& stream, const SmootherConfig& config,
                           bool marginalize)
    : stream_(stream), smoother_(config), marginalize_(marginalize) {}

bool WindowRunner::step() {
  if (next_ >= stream_.frames.size()) return false;
  const FrameMeasurements& fm = stream_.frames[next_];
  if (next_ == 0) {
    SystemState x0 = stream_.truth.front();
    x0.stamp = fm.stamp;
    smoother_.initialize(fm.id, x0, fm.observations);
  } else {
    smoother_.add_frame(fm.id, fm.stamp,
                        slice_samples(stream_.imu, smoother_.latest_stamp(), fm.stamp, 1),
                        fm.observations);
  }
  last_ = smoother_.solve_and_update();
  ++next_;
  if (marginalize_ && smoother_.needs_marginalization()) smoother_.marginalize();
  return true;
}

bool WindowRunner::run_until_marginalizations(int events) {
  while (smoother_.marginalization_count() < events) {
    if (!step()) return false;
  }
  // One more frame without marginalizing, so the trace shows the prior after an update.
  const bool saved = marginalize_;
  marginalize_ = false;
  const bool ok = step();
  marginalize_ = saved;
  return ok;
}

void WindowRunner::run_frames(int n) {
  for (int i = 0; i < n && step(); ++i) {
  }
}

}  // namespace rifls::testing

namespace rifls::testing {

double propagation_mahalanobis_mean(ErrorFormulation f, int trials, double duration,
                                    std::uint64_t seed) {
  const sim::TorusTrajectory traj;
  const ImuNoiseConfig noise;
  const double dt = 1.0 / noise.rate;
  const int n = static_cast<int>(std::lround(duration * noise.rate));

  std::vector<ImuSample> truth(n + 1);
  for (int k = 0; k <= n; ++k) {
    const sim::TruthSample s = sim::sample_truth(traj, k * dt);
    truth[k] = {k * dt, s.omega, s.accel};
  }
  SystemState x0 = sim::sample_truth(traj, 0.0).state;
  const SystemState x_true_nav = propagate_state(x0, truth, duration);

  // Covariance depends on the estimate only through the nominal trajectory.
  const Mat15 cov = propagate(x0, truth, duration, noise, f).cov;
  const Eigen::LLT<Mat15> llt(cov);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  auto draw = [&](double sigma) -> Vec3 { return Vec3(unit(rng), unit(rng), unit(rng)) * sigma; };
  const double sg = noise.sigma_g * std::sqrt(noise.rate);
  const double sa = noise.sigma_a * std::sqrt(noise.rate);
  const double sbg = noise.sigma_bg / std::sqrt(noise.rate);
  const double sba = noise.sigma_ba / std::sqrt(noise.rate);

  double sum = 0.0;
  std::vector<ImuSample> meas(n + 1);
  for (int t = 0; t < trials; ++t) {
    const Vec3 bg0 = draw(1e-3);
    const Vec3 ba0 = draw(1e-2);
    Vec3 bg = bg0;
    Vec3 ba = ba0;
    for (int k = 0; k <= n; ++k) {
      if (k > 0) {
        bg += draw(sbg);
        ba += draw(sba);
      }
      meas[k] = {truth[k].stamp, truth[k].gyro + bg + draw(sg), truth[k].accel + ba + draw(sa)};
    }
    SystemState xi = x0;
    xi.bias_g = bg0;
    xi.bias_a = ba0;
    const SystemState pred = propagate_state(xi, meas, duration);
    SystemState x_true = x_true_nav;
    x_true.bias_g = bg;
    x_true.bias_a = ba;
    const ErrorVector e = error(f, x_true, pred);
    sum += e.dot(llt.solve(e));
  }
  return sum / trials;
}

}  // namespace rifls::testing
