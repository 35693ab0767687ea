#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rifls/imu.hpp"
#include "rifls/marginalization.hpp"
#include "rifls/state.hpp"
#include "rifls/trace.hpp"
#include "rifls/vision.hpp"

namespace rifls {

// Unary factor on the first state, centred on the supplied initial estimate.
// Disabled by default so the gauge directions stay free.
struct InitialPriorConfig {
  bool enabled = false;
  double sigma_rot = 1e-4;  // rad
  double sigma_vel = 0.05;  // m/s
  double sigma_pos = 1e-4;  // m
  double sigma_bg = 1e-3;   // rad/s
  double sigma_ba = 1e-2;   // m/s^2
};

struct SmootherConfig {
  double horizon = 1.0;
  ErrorFormulation formulation = ErrorFormulation::RightInvariant;
  ImuJacobianMode imu_jac_mode = ImuJacobianMode::IdentityApprox;
  bool fej = false;
  int max_outer_iters = 10;
  double lm_lambda_init = 1e-4;
  double convergence_tol = 1e-6;   // on the step's max norm
  double function_tol = 1e-6;      // relative cost decrease, achieved or predicted
  int max_lambda_escalations = 10;
  double min_parallax_deg = 1.0;
  double covariance_floor = 1e-8;
  double prior_rank_tol = 1e-12;
  double pixel_sigma = 1.0;
  InitialPriorConfig initial_prior;
  ImuNoiseConfig imu_noise;
  CameraModel camera;

  void validate() const;
};

struct StepOutput {
  FrameId frame = 0;
  double stamp = 0.0;
  SystemState estimate;
  Mat15 nav_cov = Mat15::Zero();
  int lm_count = 0;  // landmarks in the window
  int iterations = 0;
  int lambda_escalations = 0;
  bool aborted = false;  // escalation budget exhausted
  std::vector<double> cost_history;
  int dropped_factors = 0;
  int marginalizations = 0;  // total after this frame
};

struct FrameMeasurements {
  FrameId id = 0;
  double stamp = 0.0;
  std::vector<Observation> observations;
};

struct MeasurementStream {
  std::vector<ImuSample> imu;
  std::vector<FrameMeasurements> frames;
};

class FixedLagSmoother {
 public:
  struct StateVar {
    SystemState estimate;
    std::optional<SystemState> first_estimate;
  };
  struct LandmarkVar {
    InverseDepthLandmark estimate;
  };
  struct ImuFactor {
    FactorId id;
    FrameId from;
    FrameId to;
    std::vector<ImuSample> samples;
  };
  struct ReprojectionFactor {
    FactorId id;
    FrameId frame;
    LandmarkId landmark;
    Vec2 uv;
    double sigma;
  };
  struct InitialPrior {
    FactorId id;
    FrameId frame;
    SystemState mean;
    Mat15 sqrt_info;
  };

  explicit FixedLagSmoother(SmootherConfig config);

  const SmootherConfig& config() const { return config_; }

  // First frame: the state is taken from `x0`; no factors except the optional
  // initial prior.
  void initialize(FrameId id, const SystemState& x0, const std::vector<Observation>& obs);

  // Later frames: `imu` must cover [latest stamp, stamp]; a few samples beyond
  // either end are used for interpolation when present.
  void add_frame(FrameId id, double stamp, const std::vector<ImuSample>& imu,
                 const std::vector<Observation>& obs);

  StepOutput solve_and_update();

  bool needs_marginalization() const;
  // Removes states older than latest - horizon plus the landmarks anchored at
  // them; returns the number of removed states.
  int marginalize();

  // Linearization of every factor at the current estimates, as solved.
  JacobianTrace trace() const;

  // Sum of squared whitened residuals at the current estimates.
  double cost() const;

  // Raw (unwhitened) residual of every live non-prior factor.
  std::vector<std::pair<FactorId, VecX>> live_residuals() const;

  // Re-expresses every state (and the prior linearization points) in a gauge
  // transformed world frame.
  void apply_gauge(const GaugeTransform& xi);

  const std::map<FrameId, StateVar>& states() const { return states_; }
  std::map<FrameId, StateVar>& mutable_states() { return states_; }
  const std::map<LandmarkId, LandmarkVar>& landmarks() const { return landmarks_; }
  std::map<LandmarkId, LandmarkVar>& mutable_landmarks() { return landmarks_; }
  const std::vector<ImuFactor>& imu_factors() const { return imu_factors_; }
  const std::vector<ReprojectionFactor>& reprojection_factors() const { return reproj_factors_; }
  const std::optional<MarginalPrior>& prior() const { return prior_; }
  int marginalization_count() const { return marginalizations_; }
  FrameId latest() const { return states_.rbegin()->first; }
  double latest_stamp() const { return states_.rbegin()->second.estimate.stamp; }
  std::int64_t step_count() const { return steps_; }
  int dropped_factor_count() const { return dropped_; }

  // Anchor frame of a landmark.
  FrameId anchor_of(LandmarkId l) const { return anchors_.at(l); }

 private:
  struct Linearization;
  struct PendingView {
    FrameId frame;
    Vec2 uv;
    double sigma;
  };

  const SystemState& eval_point(FrameId id) const;
  Linearization linearize() const;
  std::vector<TraceRow> linearize_factors(const std::vector<const ImuFactor*>& imu,
                                          const std::vector<const ReprojectionFactor*>& reproj,
                                          bool include_initial, bool include_prior,
                                          int* dropped,
                                          std::vector<MatX>* whiteners = nullptr) const;
  double evaluate_cost(const std::map<FrameId, StateVar>& states,
                       const std::map<LandmarkId, LandmarkVar>& landmarks,
                       const Linearization& lin) const;
  void add_observations(FrameId id, const std::vector<Observation>& obs);
  void try_admit(LandmarkId l);
  Mat15 latest_covariance(const Linearization& lin) const;

  SmootherConfig config_;
  std::map<FrameId, StateVar> states_;
  std::map<LandmarkId, LandmarkVar> landmarks_;
  std::map<LandmarkId, FrameId> anchors_;
  std::map<LandmarkId, std::vector<PendingView>> pending_;
  std::vector<ImuFactor> imu_factors_;
  std::vector<ReprojectionFactor> reproj_factors_;
  std::optional<InitialPrior> initial_prior_;
  std::optional<MarginalPrior> prior_;
  FactorId prior_id_ = -1;
  FactorId next_factor_id_ = 0;
  int marginalizations_ = 0;
  std::int64_t steps_ = 0;
  int dropped_ = 0;
};

struct SessionResult {
  std::vector<StepOutput> steps;
  std::vector<JacobianTrace> traces;
  int marginalizations = 0;
  bool failed = false;
  std::string failure;
};

struct SessionOptions {
  // Record a JacobianTrace after each solve for the first `trace_frames`
  // frames (-1: every frame).
  int trace_frames = 0;
};

// add_frame -> solve_and_update -> marginalize (when the window exceeds the
// horizon) for every frame. Numerical divergence ends the session with
// `failed` set.
SessionResult run_session(const MeasurementStream& stream, const SmootherConfig& config,
                          const SystemState& init, const SessionOptions& options = {});

}  // namespace rifls
