#include "rifls/sim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "fixtures.hpp"
#include "rifls/error.hpp"
#include "rifls/experiment.hpp"

namespace rifls::sim {
namespace {

const SimStream& default_stream() {
  static const SimStream s = simulate(SimConfig{}, 2024);
  return s;
}

bool same_stream(const SimStream& a, const SimStream& b) {
  if (a.imu.size() != b.imu.size() || a.frames.size() != b.frames.size()) return false;
  for (size_t k = 0; k < a.imu.size(); ++k) {
    if (a.imu[k].stamp != b.imu[k].stamp || a.imu[k].gyro != b.imu[k].gyro ||
        a.imu[k].accel != b.imu[k].accel) {
      return false;
    }
  }
  for (size_t k = 0; k < a.frames.size(); ++k) {
    const FrameMeasurements& x = a.frames[k];
    const FrameMeasurements& y = b.frames[k];
    if (x.id != y.id || x.stamp != y.stamp || x.observations.size() != y.observations.size()) {
      return false;
    }
    for (size_t i = 0; i < x.observations.size(); ++i) {
      if (x.observations[i].landmark != y.observations[i].landmark ||
          x.observations[i].uv != y.observations[i].uv) {
        return false;
      }
    }
    const SystemState& s = a.truth[k];
    const SystemState& t = b.truth[k];
    if (s.stamp != t.stamp || s.R() != t.R() || s.v() != t.v() || s.p() != t.p() ||
        s.bias_g != t.bias_g || s.bias_a != t.bias_a) {
      return false;
    }
  }
  return a.track_landmark == b.track_landmark;
}

TEST(Scene, EmptyWhenNoLandmarks) {
  SceneConfig c;
  c.landmarks = 0;
  EXPECT_TRUE(generate_scene(c, 1).landmarks.empty());
}

TEST(Scene, LandmarksLieOnWalls) {
  SceneConfig c;
  const Scene s = generate_scene(c, 3);
  ASSERT_EQ(s.landmarks.size(), static_cast<size_t>(c.landmarks));
  for (const Vec3& p : s.landmarks) {
    const double wall = std::min(std::abs(std::abs(p.x()) - c.half_x), std::abs(std::abs(p.y()) - c.half_y));
    EXPECT_LT(wall, 1e-9);
    EXPECT_LE(std::abs(p.x()), c.half_x + 1e-9);
    EXPECT_LE(std::abs(p.y()), c.half_y + 1e-9);
    EXPECT_GE(p.z(), c.z_min);
    EXPECT_LE(p.z(), c.z_max);
  }
}

TEST(Scene, DeterministicPerSeed) {
  SceneConfig c;
  EXPECT_EQ(generate_scene(c, 5).landmarks, generate_scene(c, 5).landmarks);
  EXPECT_NE(generate_scene(c, 5).landmarks, generate_scene(c, 6).landmarks);
}

TEST(Scene, RejectsBadDimensions) {
  SceneConfig c;
  c.half_x = 0.0;
  EXPECT_THROW(generate_scene(c, 1), Error);
}

TEST(Trajectory, StartState) {
  TorusTrajectory c;
  const TruthSample s = sample_truth(c, 0.0);
  EXPECT_EQ(s.state.stamp, 0.0);
  EXPECT_LT((s.state.p() - (c.center + Vec3(c.major_radius + c.minor_radius, 0.0, 0.0))).norm(), 1e-12);
  EXPECT_TRUE(s.state.bias_g.isZero(0.0));
  EXPECT_TRUE(s.state.nav.r.is_valid(1e-12));
}

TEST(Trajectory, DerivativesAreConsistent) {
  TorusTrajectory c;
  const double h = 1e-5;
  for (double t : {0.0, 1.3, 7.7, 21.0, 45.5}) {
    const TruthSample s = sample_truth(c, t);
    const TruthSample a = sample_truth(c, t + h);
    const TruthSample b = sample_truth(c, t - h);
    EXPECT_LT(((a.state.p() - b.state.p()) / (2 * h) - s.state.v()).norm(), 1e-6);
    EXPECT_LT(((a.state.v() - b.state.v()) / (2 * h) - s.world_accel).norm(), 1e-6);
    const Vec3 w = lie::so3_log(lie::Rot3(b.state.R().transpose() * a.state.R())) / (2 * h);
    EXPECT_LT((w - s.omega).norm(), 1e-6);
    EXPECT_LT((s.state.R() * s.accel + kGravity - s.world_accel).norm(), 1e-12);
  }
}

TEST(Trajectory, BodyXFollowsVelocity) {
  TorusTrajectory c;
  for (double t : {0.5, 10.0, 30.0}) {
    const TruthSample s = sample_truth(c, t);
    EXPECT_GT(s.state.R().col(0).dot(s.state.v().normalized()), 1.0 - 1e-9);
  }
}

TEST(Trajectory, MeanSpeedMatchesCalibration) {
  EXPECT_NEAR(mean_speed(TorusTrajectory{}), 2.30, 0.05);
}

TEST(Trajectory, NoiselessImuReproducesTruth) {
  TorusTrajectory c;
  c.duration = 5.0;
  ImuNoiseConfig quiet;
  quiet.sigma_g = quiet.sigma_a = quiet.sigma_bg = quiet.sigma_ba = 0.0;
  const ImuSynthesis imu = synth_imu(c, quiet, Vec3::Zero(), Vec3::Zero(), 1);
  const SystemState x0 = sample_truth(c, 0.0).state;
  const SystemState x1 = propagate_state(x0, imu.samples, 1.0);
  EXPECT_LT((x1.p() - sample_truth(c, 1.0).state.p()).norm(), 1e-4);
  const SystemState x5 = propagate_state(x0, imu.samples, 5.0);
  EXPECT_LT((x5.p() - sample_truth(c, 5.0).state.p()).norm(), 1e-3);
}

TEST(Imu, ZeroNoiseEqualsTruthPlusBias) {
  TorusTrajectory c;
  c.duration = 2.0;
  ImuNoiseConfig quiet;
  quiet.sigma_g = quiet.sigma_a = quiet.sigma_bg = quiet.sigma_ba = 0.0;
  const Vec3 bg(1e-3, -2e-3, 5e-4);
  const Vec3 ba(0.02, 0.01, -0.03);
  const ImuSynthesis imu = synth_imu(c, quiet, bg, ba, 9);
  ASSERT_EQ(imu.samples.size(), 201u);
  for (const ImuSample& s : imu.samples) {
    const TruthSample t = sample_truth(c, s.stamp);
    EXPECT_EQ(s.gyro, Vec3(t.omega + bg));
    EXPECT_EQ(s.accel, Vec3(t.accel + ba));
  }
}

TEST(Imu, WhiteNoiseVarianceScalesWithRate) {
  TorusTrajectory c;
  c.duration = 1000.0;
  ImuNoiseConfig n;
  n.sigma_bg = n.sigma_ba = 0.0;
  const ImuSynthesis imu = synth_imu(c, n, Vec3::Zero(), Vec3::Zero(), 4);
  double sg = 0.0;
  double sa = 0.0;
  for (const ImuSample& s : imu.samples) {
    const TruthSample t = sample_truth(c, s.stamp);
    sg += (s.gyro - t.omega).squaredNorm();
    sa += (s.accel - t.accel).squaredNorm();
  }
  const double m = 3.0 * static_cast<double>(imu.samples.size());
  EXPECT_NEAR(sg / m / (n.sigma_g * n.sigma_g * n.rate), 1.0, 0.02);
  EXPECT_NEAR(sa / m / (n.sigma_a * n.sigma_a * n.rate), 1.0, 0.02);
}

TEST(Imu, BiasRandomWalkVariance) {
  TorusTrajectory c;
  c.duration = 10.0;
  ImuNoiseConfig n;
  double vg = 0.0;
  double va = 0.0;
  const int runs = 1000;
  for (int k = 0; k < runs; ++k) {
    const ImuSynthesis imu = synth_imu(c, n, Vec3::Zero(), Vec3::Zero(), 100 + k);
    vg += imu.bias_g.back().squaredNorm();
    va += imu.bias_a.back().squaredNorm();
  }
  const double t = c.duration;
  EXPECT_NEAR(vg / (3.0 * runs) / (n.sigma_bg * n.sigma_bg * t), 1.0, 0.05);
  EXPECT_NEAR(va / (3.0 * runs) / (n.sigma_ba * n.sigma_ba * t), 1.0, 0.05);
}

TEST(Frames, NoiselessPixelsMatchProjection) {
  SimConfig c;
  c.pixel_sigma = 0.0;
  const Scene scene = generate_scene(c.scene, 7);
  std::vector<SystemState> poses;
  for (double t : {0.0, 0.1, 0.2}) poses.push_back(sample_truth(c.trajectory, t).state);
  const auto frames = synth_frames(scene, poses, c, 7);
  const SystemState& anchor = poses[0];
  const Mat3 r_wc = anchor.R() * c.camera.r_bc;
  const Vec3 p_wc = anchor.p() + anchor.R() * c.camera.t_bc;
  int checked = 0;
  for (size_t k = 0; k < poses.size(); ++k) {
    ASSERT_FALSE(frames[k].empty());
    for (const RawObservation& z : frames[k]) {
      const Vec3 pc = r_wc.transpose() * (scene.landmarks[z.landmark] - p_wc);
      if (pc.z() <= 0.1) continue;
      const InverseDepthLandmark f{pc.x() / pc.z(), pc.y() / pc.z(), 1.0 / pc.z(), 0};
      EXPECT_LT((project(c.camera, poses[k], anchor, f) - z.uv).norm(), 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 50);
}

TEST(Frames, BehindCameraNeverObserved) {
  SimConfig c;
  Scene scene;
  const SystemState x = sample_truth(c.trajectory, 0.0).state;
  const Vec3 fwd = x.R() * c.camera.r_bc.col(2);
  scene.landmarks = {x.p() - 5.0 * fwd, x.p() + 5.0 * fwd};
  const auto frames = synth_frames(scene, {x}, c, 1);
  ASSERT_EQ(frames[0].size(), 1u);
  EXPECT_EQ(frames[0][0].landmark, 1);
}

TEST(Frames, PixelNoiseStd) {
  SimConfig c;
  c.trajectory.duration = 20.0;
  SimConfig clean = c;
  clean.pixel_sigma = 0.0;
  const Scene scene = generate_scene(c.scene, 12);
  std::vector<SystemState> poses;
  for (int k = 0; k <= 200; ++k) poses.push_back(sample_truth(c.trajectory, 0.1 * k).state);
  const auto noisy = synth_frames(scene, poses, c, 12);
  const auto exact = synth_frames(scene, poses, clean, 12);
  double ss = 0.0;
  double n = 0.0;
  for (size_t k = 0; k < poses.size(); ++k) {
    size_t j = 0;
    for (const RawObservation& z : noisy[k]) {
      // Visibility is decided before noise, so both lists name the same landmarks.
      ASSERT_LT(j, exact[k].size());
      ASSERT_EQ(exact[k][j].landmark, z.landmark);
      ss += (z.uv - exact[k][j].uv).squaredNorm();
      n += 2.0;
      ++j;
    }
  }
  EXPECT_GT(n, 5000.0);
  EXPECT_NEAR(std::sqrt(ss / n), 1.0, 0.02);
}

TEST(Frontend, SingleFrameTrack) {
  const TrackedFrames t = frontend_tracks({{{4, Vec2(1, 2)}}, {}}, FrontendConfig{}, 1);
  EXPECT_EQ(t.track_landmark.size(), 1u);
  EXPECT_EQ(t.mean_track_length, 1.0);
}

TEST(Frontend, ContinuousVisibilityIsOneTrack) {
  FrontendConfig c;
  c.break_probability = 0.0;
  std::vector<std::vector<RawObservation>> frames(7, {{2, Vec2(3, 4)}});
  const TrackedFrames t = frontend_tracks(frames, c, 1);
  ASSERT_EQ(t.track_landmark.size(), 1u);
  EXPECT_EQ(t.mean_track_length, 7.0);
  for (size_t k = 0; k < frames.size(); ++k) {
    ASSERT_EQ(t.frames[k].size(), 1u);
    EXPECT_EQ(t.frames[k][0].frame, static_cast<FrameId>(k));
    EXPECT_EQ(t.frames[k][0].landmark, t.frames[0][0].landmark);
  }
}

TEST(Frontend, GapStartsNewTrack) {
  FrontendConfig c;
  c.break_probability = 0.0;
  const TrackedFrames t =
      frontend_tracks({{{2, Vec2(1, 1)}}, {}, {{2, Vec2(1, 1)}}}, c, 1);
  EXPECT_EQ(t.track_landmark.size(), 2u);
}

TEST(Simulate, CalibratedToTargetStatistics) {
  const SimStream& s = default_stream();
  EXPECT_EQ(s.frames.size(), 601u);
  EXPECT_EQ(s.imu.size(), 6001u);
  EXPECT_NEAR(s.mean_observations_per_frame(), 40.5, 0.2 * 40.5);
  EXPECT_GE(s.mean_track_length(), 4.5);
  EXPECT_LE(s.mean_track_length(), 7.5);
}

TEST(Simulate, FramesAlignWithImu) {
  const SimStream& s = default_stream();
  for (size_t k = 0; k < s.frames.size(); ++k) {
    EXPECT_EQ(s.frames[k].stamp, s.imu[10 * k].stamp);
    EXPECT_EQ(s.truth[k].stamp, s.frames[k].stamp);
  }
}

TEST(Simulate, Deterministic) {
  const SimConfig c = testing::short_sim(10.0);
  EXPECT_TRUE(same_stream(simulate(c, 77), simulate(c, 77)));
  EXPECT_FALSE(same_stream(simulate(c, 77), simulate(c, 78)));
}

TEST(Simulate, SeedStreamsAreIndependent) {
  EXPECT_NE(derive_seed(1, kImuStream), derive_seed(1, kPixelStream));
  EXPECT_NE(derive_seed(1, kImuStream), derive_seed(2, kImuStream));
  EXPECT_EQ(derive_seed(3, kSceneStream, 4), derive_seed(3, kSceneStream, 4));
}

TEST(Simulate, RejectsIncompatibleRates) {
  SimConfig c;
  c.camera_rate = 30.0;
  EXPECT_THROW(simulate(c, 1), Error);
}

TEST(Simulate, DirectoryRoundTripIsBitwise) {
  const SimStream s = simulate(testing::short_sim(3.0), 5);
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "rifls_sim_roundtrip";
  std::filesystem::remove_all(dir);
  write_stream(s, dir);
  const SimStream back = read_stream(dir);
  std::filesystem::remove_all(dir);
  EXPECT_TRUE(same_stream(s, back));
}

TEST(Simulate, ReadMissingDirectoryThrows) {
  EXPECT_THROW(read_stream("/nonexistent/rifls"), Error);
}

TEST(Simulate, NoiselessSessionKeepsZeroCost) {
  const SimConfig c = testing::short_sim(6.0);
  const SimStream s = testing::noiseless_stream(c, 41);
  for (ErrorFormulation f : {ErrorFormulation::Traditional, ErrorFormulation::RightInvariant}) {
    SmootherConfig sc = bind_sensors(SmootherConfig{}, c);
    sc.formulation = f;
    testing::WindowRunner run(s, sc, true);
    int steps = 0;
    while (run.step()) {
      ASSERT_FALSE(run.last().cost_history.empty());
      EXPECT_LT(run.last().cost_history.back(), 1e-8) << to_string(f) << " frame " << steps;
      ++steps;
    }
    EXPECT_EQ(steps, static_cast<int>(s.frames.size()));
    EXPECT_GT(run.smoother().marginalization_count(), 0);
  }
}

}  // namespace
}  // namespace rifls::sim
