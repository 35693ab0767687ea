#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rifls/sim.hpp"
#include "rifls/smoother.hpp"

namespace rifls::eval {

enum class Component { Position, Orientation, Pose };

// Errors of one frame. nees_* follow the estimator's own error convention
// (truth relative to estimate); rmse_* are convention free: position and bias
// differences and log(R_true R_est^T).
struct FrameError {
  double stamp = 0.0;
  Vec3 nees_p = Vec3::Zero();
  Vec3 nees_theta = Vec3::Zero();
  Mat6 cov_pose = Mat6::Identity();  // (p, theta) order
  Vec3 rmse_p = Vec3::Zero();
  Vec3 rmse_theta = Vec3::Zero();
  Vec3 rmse_bg = Vec3::Zero();
  Vec3 rmse_ba = Vec3::Zero();
};

FrameError frame_error(ErrorFormulation f, const SystemState& truth, const SystemState& est,
                       const Mat15& nav_cov);

struct TrialResult {
  std::string method;
  int trial = 0;
  std::vector<FrameError> frames;
  bool diverged = false;
  std::string failure;
  bool success = false;  // not diverged and final position error <= 100 m
};

inline constexpr double kSuccessPositionBound = 100.0;

// Mean over successful trials of dX^T Sigma^-1 dX at frame index k. A
// non-positive-definite block is regularized by 1e-12 I and counted in
// *regularized when non-null.
double nees(const std::vector<TrialResult>& trials, Component c, size_t k,
            int* regularized = nullptr);
double rmse(const std::vector<TrialResult>& trials, Component c, size_t k);
// RMSE of the gyro (`gyro` true) or accelerometer bias.
double rmse_bias(const std::vector<TrialResult>& trials, bool gyro, size_t k);

int successful(const std::vector<TrialResult>& trials);

// Mean of the samples with stamp >= last stamp - window.
double trailing_mean(const std::vector<double>& stamps, const std::vector<double>& values,
                     double window = 10.0);

struct Method {
  std::string name;
  SmootherConfig config;
};

struct MethodReport {
  std::string name;
  ErrorFormulation formulation = ErrorFormulation::RightInvariant;
  int n_trials = 0;
  int n_success = 0;
  std::vector<double> stamps;
  std::vector<double> nees_position, nees_orientation, nees_pose;
  std::vector<double> rmse_position, rmse_orientation, rmse_bg, rmse_ba;
  int regularized = 0;
  double trailing_nees_position = 0.0;
  double trailing_nees_orientation = 0.0;
  double trailing_nees_pose = 0.0;
  double final_rmse_position = 0.0;
  double final_rmse_orientation = 0.0;
};

struct EnsembleReport {
  std::vector<MethodReport> methods;
  double trailing_window = 10.0;

  const MethodReport& method(const std::string& name) const;
};

// Aggregates per-method trial lists (trial order irrelevant).
EnsembleReport aggregate(const std::vector<Method>& methods,
                         const std::vector<std::vector<TrialResult>>& trials,
                         double trailing_window = 10.0);

struct MonteCarloOptions {
  int n_trials = 1;
  std::uint64_t seed0 = 0;
  int threads = 0;                  // 0: RIFLS_THREADS or hardware concurrency
  double initial_velocity_sigma = 0.05;
  double trailing_window = 10.0;
  std::filesystem::path log_dir;    // per-trial logs when non-empty
};

// The initial estimate of trial `trial`: true pose, velocity perturbed by
// N(0, sigma^2 I), zero biases.
SystemState initial_estimate(const sim::SimStream& s, double velocity_sigma);

// Runs one trial of every method on the same simulated stream.
std::vector<TrialResult> run_trial(const sim::SimConfig& sim_config,
                                   const std::vector<Method>& methods, int trial,
                                   const MonteCarloOptions& opt);

struct MonteCarloResult {
  EnsembleReport report;
  std::vector<std::vector<TrialResult>> trials;  // [method][trial]
};

MonteCarloResult run_monte_carlo(const sim::SimConfig& sim_config,
                                 const std::vector<Method>& methods, const MonteCarloOptions& opt);

int thread_count(int requested);

void write_trial_log(const TrialResult& t, const std::filesystem::path& path);
TrialResult read_trial_log(const std::filesystem::path& path);

// curves_<method>.csv, metrics.csv (long form) and summary.csv.
void write_report(const EnsembleReport& r, const std::filesystem::path& dir);

}  // namespace rifls::eval
