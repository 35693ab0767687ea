#pragma once

#include <cstdint>

#include "rifls/sim.hpp"
#include "rifls/smoother.hpp"

namespace rifls::testing {

// Default torus session shortened to `duration` seconds.
sim::SimConfig short_sim(double duration);

// Simulated stream with exact measurements: IMU samples from the true
// trajectory with zero biases, pixels projected without noise.
sim::SimStream noiseless_stream(const sim::SimConfig& c, std::uint64_t seed);

// Smoother bound to the sim's sensors, without the initial prior so the gauge
// directions stay free.
SmootherConfig nullity_config(const sim::SimConfig& sim, ErrorFormulation f, bool fej = false,
                              ImuJacobianMode mode = ImuJacobianMode::IdentityApprox);

// Steps a smoother through a stream one frame at a time, starting from the
// true first state.
class WindowRunner {
 public:
  WindowRunner(const sim::SimStream& stream, const SmootherConfig& config,
               bool marginalize = true);

  // Adds the next frame and solves; marginalizes afterwards when enabled and
  // due. Returns false at the end of the stream.
  bool step();
  // Steps until `events` marginalizations happened, then adds and solves one
  // more frame so the prior has been through an update.
  bool run_until_marginalizations(int events);
  void run_frames(int n);

  const FixedLagSmoother& smoother() const { return smoother_; }
  FixedLagSmoother& smoother() { return smoother_; }
  const StepOutput& last() const { return last_; }
  size_t next_frame() const { return next_; }

 private:
  const sim::SimStream& stream_;
  FixedLagSmoother smoother_;
  bool marginalize_;
  size_t next_ = 0;
  StepOutput last_;
};

}  // namespace rifls::testing

namespace rifls::testing {

// Monte-Carlo check of propagated covariance: noisy IMU samples with random
// walking biases along the torus are integrated from the true first state,
// and the mean of e^T Sigma^-1 e over `trials` is returned (15 when the
// covariance is consistent).
double propagation_mahalanobis_mean(ErrorFormulation f, int trials, double duration,
                                    std::uint64_t seed);

}  // namespace rifls::testing
