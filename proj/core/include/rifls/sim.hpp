#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <vector>

#include "rifls/imu.hpp"
#include "rifls/smoother.hpp"
#include "rifls/state.hpp"
#include "rifls/vision.hpp"

namespace rifls::sim {

// Seeds for independent random streams, derived from (seed, a, b) by SplitMix64.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

enum Stream : std::uint64_t {
  kSceneStream = 1,
  kImuStream = 2,
  kBiasStream = 3,
  kPixelStream = 4,
  kFrontendStream = 5,
  kInitialBiasStream = 6,
  kInitialVelocityStream = 7,
};

struct SceneConfig {
  double half_x = 12.0;  // walls at x = +-half_x
  double half_y = 12.0;
  double z_min = -3.0;
  double z_max = 7.0;
  int landmarks = 255;
};

struct Scene {
  std::vector<Vec3> landmarks;
  Vec3 lower = Vec3::Zero();
  Vec3 upper = Vec3::Zero();
};

Scene generate_scene(const SceneConfig& c, std::uint64_t seed);

// Position c + ((R + r cos wm t) cos wM t, (R + r cos wm t) sin wM t, r sin wm t).
// Body x follows the velocity, body z stays as close to world up as the bank
// angle bank * sin(wm t) allows.
struct TorusTrajectory {
  double major_radius = 6.0;
  double minor_radius = 1.0;
  double omega_major = 0.345;
  double omega_minor = 1.0;
  double bank = 0.3;  // rad
  Vec3 center = Vec3(0.0, 0.0, 2.0);
  double duration = 60.0;
};

struct TruthSample {
  SystemState state;  // biases zero
  Vec3 accel;         // specific force in the body frame
  Vec3 omega;         // angular rate in the body frame
  Vec3 world_accel;
};

TruthSample sample_truth(const TorusTrajectory& traj, double t);

// Mean speed over [0, duration] by trapezoidal quadrature.
double mean_speed(const TorusTrajectory& traj, double dt = 1e-2);

struct FrontendConfig {
  // Probability that a track ends between consecutive frames although the
  // landmark stays visible. The next observation then starts a new track.
  double break_probability = 0.125;
};

struct SimConfig {
  TorusTrajectory trajectory;
  SceneConfig scene;
  ImuNoiseConfig imu_noise;
  CameraModel camera;
  FrontendConfig frontend;
  double camera_rate = 10.0;  // Hz, must divide the IMU rate
  double pixel_sigma = 1.0;
  double max_range = 25.0;
  double min_depth = 0.1;
  double initial_bias_g_sigma = 1e-3;
  double initial_bias_a_sigma = 1e-2;

  void validate() const;
};

struct SimStream {
  std::vector<ImuSample> imu;
  std::vector<FrameMeasurements> frames;  // observation ids are track ids
  std::vector<SystemState> truth;         // per frame, biases included
  std::map<LandmarkId, int> track_landmark;  // track id -> scene landmark index
  std::uint64_t seed = 0;

  MeasurementStream measurements() const { return {imu, frames}; }
  double mean_observations_per_frame() const;
  double mean_track_length() const;
};

// IMU samples with biases random walking from bias0; noise from `noise`.
struct ImuSynthesis {
  std::vector<ImuSample> samples;
  std::vector<Vec3> bias_g;  // per sample
  std::vector<Vec3> bias_a;
};
ImuSynthesis synth_imu(const TorusTrajectory& traj, const ImuNoiseConfig& noise,
                       const Vec3& bias_g0, const Vec3& bias_a0, std::uint64_t seed);

struct RawObservation {
  int landmark = 0;  // scene index
  Vec2 uv = Vec2::Zero();
};

// Visible landmarks (in front, inside the image before noise, within range)
// with pixel noise, one list per frame.
std::vector<std::vector<RawObservation>> synth_frames(const Scene& scene,
                                                      const std::vector<SystemState>& poses,
                                                      const SimConfig& c, std::uint64_t seed);

struct TrackedFrames {
  std::vector<std::vector<Observation>> frames;  // landmark field holds the track id
  std::map<LandmarkId, int> track_landmark;
  double mean_track_length = 0.0;
};

TrackedFrames frontend_tracks(const std::vector<std::vector<RawObservation>>& frames,
                              const FrontendConfig& c, std::uint64_t seed);

SimStream simulate(const SimConfig& c, std::uint64_t seed);

// CSV directory layout: imu.csv, frames.csv (frame, stamp), obs_<frame>.csv
// (track, landmark, u, v), truth.csv, tracks.csv.
void write_stream(const SimStream& s, const std::filesystem::path& dir);
SimStream read_stream(const std::filesystem::path& dir);

}  // namespace rifls::sim
