#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "rifls/error.hpp"
#include "rifls/experiment.hpp"
#include "rifls/smoother.hpp"

namespace rifls {
namespace {

using testing::nullity_config;
using testing::WindowRunner;

constexpr ErrorFormulation kBoth[] = {ErrorFormulation::Traditional,
                                      ErrorFormulation::RightInvariant};

const sim::SimStream& short_stream() {
  static const sim::SimStream s = sim::simulate(testing::short_sim(4.0), 11);
  return s;
}

const sim::SimStream& clean_stream() {
  static const sim::SimStream s = testing::noiseless_stream(testing::short_sim(4.0), 12);
  return s;
}

SmootherConfig prior_config(ErrorFormulation f) {
  SmootherConfig c = nullity_config(sim::SimConfig{}, f);
  c.initial_prior.enabled = true;
  return c;
}

// Gauge transform taking `est` onto `truth` in yaw and position.
GaugeTransform align(const SystemState& est, const SystemState& truth) {
  const Vec3 w = lie::so3_log(truth.nav.r * est.nav.r.inverse());
  GaugeTransform g;
  g.dphi = w.dot(kGravityAxis);
  g.dt = truth.p() - gauge_transform({g.dphi, Vec3::Zero()}, est).p();
  return g;
}

double nav_distance(const SystemState& a, const SystemState& b) {
  return (a.p() - b.p()).norm() + (a.v() - b.v()).norm() +
         lie::so3_log(a.nav.r * b.nav.r.inverse()).norm();
}

VecX stacked_residual(const JacobianTrace& t) {
  VecX r(t.total_rows());
  int at = 0;
  for (const TraceRow& row : t.rows) {
    r.segment(at, row.rows()) = row.residual;
    at += row.rows();
  }
  return r;
}

double dense_cost(const JacobianTrace& t) {
  double c = 0.0;
  for (const TraceRow& r : t.rows) c += r.residual.squaredNorm();
  return c;
}

TEST(SmootherConfig, Validation) {
  SmootherConfig c;
  EXPECT_NO_THROW(c.validate());
  c.fej = true;
  EXPECT_THROW(c.validate(), Error);
  c.formulation = ErrorFormulation::Traditional;
  EXPECT_NO_THROW(c.validate());
  c.horizon = 0.0;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidConfig);
  }
}

TEST(AddFrame, FirstFrameHasNoFactors) {
  FixedLagSmoother s(nullity_config(sim::SimConfig{}, ErrorFormulation::RightInvariant));
  s.initialize(0, short_stream().truth[0], short_stream().frames[0].observations);
  EXPECT_EQ(s.states().size(), 1u);
  EXPECT_TRUE(s.imu_factors().empty());
  EXPECT_TRUE(s.reprojection_factors().empty());
  EXPECT_FALSE(s.prior().has_value());
}

TEST(AddFrame, SecondFrameWithoutObservations) {
  const sim::SimStream& st = short_stream();
  FixedLagSmoother s(nullity_config(sim::SimConfig{}, ErrorFormulation::RightInvariant));
  s.initialize(0, st.truth[0], {});
  s.add_frame(1, st.frames[1].stamp, slice_samples(st.imu, 0.0, st.frames[1].stamp, 1), {});
  EXPECT_EQ(s.imu_factors().size(), 1u);
  EXPECT_TRUE(s.reprojection_factors().empty());
  // The new state is the propagated previous estimate.
  const SystemState pred =
      propagate_state(st.truth[0], slice_samples(st.imu, 0.0, st.frames[1].stamp, 1),
                      st.frames[1].stamp);
  EXPECT_LT((s.states().at(1).estimate.nav.matrix() - pred.nav.matrix()).norm(), 1e-12);
}

TEST(AddFrame, RejectsBadStampsAndCoverage) {
  const sim::SimStream& st = short_stream();
  FixedLagSmoother s(nullity_config(sim::SimConfig{}, ErrorFormulation::RightInvariant));
  s.initialize(0, st.truth[0], {});
  try {
    s.add_frame(1, 0.0, slice_samples(st.imu, 0.0, 0.1, 1), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonMonotoneStamp);
  }
  try {
    s.add_frame(1, 0.1, slice_samples(st.imu, 0.0, 0.05, 0), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingImuCoverage);
  }
}

TEST(AddFrame, FactorsMatchSimulatorBookkeeping) {
  const sim::SimStream& st = short_stream();
  WindowRunner run(st, nullity_config(sim::SimConfig{}, ErrorFormulation::RightInvariant), false);
  run.run_frames(10);
  const FixedLagSmoother& s = run.smoother();
  EXPECT_EQ(s.imu_factors().size(), 9u);

  std::map<std::pair<FrameId, LandmarkId>, Vec2> observed;
  for (int k = 0; k < 10; ++k) {
    for (const Observation& z : st.frames[k].observations) observed[{k, z.landmark}] = z.uv;
  }
  std::set<std::pair<FrameId, LandmarkId>> seen;
  for (const auto& f : s.reprojection_factors()) {
    const auto key = std::make_pair(f.frame, f.landmark);
    ASSERT_TRUE(observed.count(key));
    EXPECT_EQ(observed.at(key), f.uv);
    EXPECT_TRUE(seen.insert(key).second);
    EXPECT_TRUE(s.landmarks().count(f.landmark));
  }
  // Tracks whose true views subtend a wide angle are admitted with every view.
  std::map<LandmarkId, std::vector<std::pair<int, Vec2>>> tracks;
  for (const auto& [key, uv] : observed) tracks[key.second].push_back({int(key.first), uv});
  const CameraModel cam;
  int wide = 0;
  for (const auto& [id, views] : tracks) {
    std::vector<TrackView> tv;
    for (const auto& [k, uv] : views) tv.push_back({&st.truth[k], uv});
    if (!disparity_gate(cam, tv, 2.0 * M_PI / 180.0)) continue;
    ++wide;
    for (const auto& [k, uv] : views) EXPECT_TRUE(seen.count({k, id})) << id;
  }
  EXPECT_GE(wide, 3);
}

TEST(Linearize, ImuRowIsWhitenedTransitionPair) {
  const sim::SimStream& st = short_stream();
  WindowRunner run(st, nullity_config(sim::SimConfig{}, ErrorFormulation::RightInvariant), false);
  run.run_frames(2);
  const JacobianTrace t = run.smoother().trace();
  const auto it = std::find_if(t.rows.begin(), t.rows.end(),
                               [](const TraceRow& r) { return r.kind == FactorKind::Imu; });
  ASSERT_NE(it, t.rows.end());
  ASSERT_EQ(it->vars.size(), 2u);
  const MatX& w = it->blocks[1];
  EXPECT_LT((w - w.transpose()).norm(), 1e-9 * w.norm());
  const FixedLagSmoother::ImuFactor& f = run.smoother().imu_factors().front();
  const SystemState& from = run.smoother().states().at(f.from).estimate;
  const Mat15 phi = propagate(from, f.samples, run.smoother().states().at(f.to).estimate.stamp,
                              ImuNoiseConfig{}, ErrorFormulation::RightInvariant)
                        .phi;
  const MatX a_pred_phi = w.inverse() * it->blocks[0];
  EXPECT_LT((a_pred_phi + phi).norm() / phi.norm(), 1e-9);
}

TEST(Solve, NoiselessTruthHasZeroCost) {
  for (ErrorFormulation f : kBoth) {
    WindowRunner run(clean_stream(), nullity_config(sim::SimConfig{}, f), false);
    run.step();
    const SystemState x0 = run.smoother().states().at(0).estimate;
    run.run_frames(9);
    EXPECT_LT(run.smoother().cost(), 1e-10) << to_string(f);
    EXPECT_LT(dense_cost(run.smoother().trace()), 1e-10);
    EXPECT_LE(run.last().iterations, 1);
    const GaugeTransform g = align(run.smoother().states().at(0).estimate, x0);
    for (const auto& [id, v] : run.smoother().states()) {
      EXPECT_LT(nav_distance(gauge_transform(g, v.estimate), clean_stream().truth[id]), 1e-6);
    }
  }
}

TEST(Solve, RecoversVelocityPerturbation) {
  for (ErrorFormulation f : kBoth) {
    const sim::SimStream& st = clean_stream();
    FixedLagSmoother s(nullity_config(sim::SimConfig{}, f));
    SystemState x0 = st.truth[0];
    x0.nav.v += Vec3(0.05, 0.0, 0.0);
    s.initialize(0, x0, st.frames[0].observations);
    s.solve_and_update();
    StepOutput out;
    for (int k = 1; k < 10; ++k) {
      s.add_frame(k, st.frames[k].stamp,
                  slice_samples(st.imu, s.latest_stamp(), st.frames[k].stamp, 1),
                  st.frames[k].observations);
      out = s.solve_and_update();
    }
    EXPECT_LE(out.iterations, 5) << to_string(f);
    // Compared up to the unobservable yaw and translation.
    const GaugeTransform g = align(s.states().at(0).estimate, st.truth[0]);
    for (const auto& [id, v] : s.states()) {
      EXPECT_LT(nav_distance(gauge_transform(g, v.estimate), st.truth[id]), 1e-6) << to_string(f);
    }
    EXPECT_LT(s.cost(), 1e-10);
  }
}

TEST(Solve, GaugeDirectionsAreUnconstrained) {
  for (ErrorFormulation f : kBoth) {
    WindowRunner run(short_stream(), nullity_config(sim::SimConfig{}, f), false);
    run.run_frames(10);
    const MatX j = run.smoother().trace().dense();
    const MatX h = j.transpose() * j;
    Eigen::SelfAdjointEigenSolver<MatX> es(h);
    const VecX& ev = es.eigenvalues();
    int tiny = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) tiny += ev(i) < 1e-8 * ev.maxCoeff();
    EXPECT_GE(tiny, 4) << to_string(f);
  }
}

// One damped step of the smoother against the dense normal equations of its
// own stacked Jacobian.
TEST(Solve, SparseStepMatchesDenseNormalEquations) {
  for (ErrorFormulation f : kBoth) {
    SmootherConfig c = prior_config(f);
    c.max_outer_iters = 1;
    c.lm_lambda_init = 1e-3;
    WindowRunner run(short_stream(), c, false);
    run.run_frames(4);
    FixedLagSmoother& s = run.smoother();
    const FrameMeasurements& fm = short_stream().frames[4];
    s.add_frame(fm.id, fm.stamp, slice_samples(short_stream().imu, s.latest_stamp(), fm.stamp, 1),
                fm.observations);
    const FixedLagSmoother before = s;
    const JacobianTrace t = s.trace();
    const StepOutput out = s.solve_and_update();
    ASSERT_EQ(out.iterations, 1);
    ASSERT_FALSE(out.aborted);
    const double lambda = c.lm_lambda_init * std::pow(10.0, out.lambda_escalations);

    const MatX j = t.dense();
    const VecX r = stacked_residual(t);
    // Extended precision keeps the oracle's own rounding out of the comparison.
    using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
    using VecL = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
    const MatL jl = j.cast<long double>();
    const MatL hl = jl.transpose() * jl + lambda * MatL::Identity(j.cols(), j.cols());
    const VecL gl = jl.transpose() * r.cast<long double>();
    const VecX delta = VecL(hl.ldlt().solve(-gl)).cast<double>();

    const std::vector<int> off = t.column_offsets();
    VecX applied(j.cols());
    for (size_t k = 0; k < t.columns.size(); ++k) {
      const VarKey& key = t.columns[k];
      if (key.is_state()) {
        applied.segment<15>(off[k]) =
            error(f, s.states().at(key.id).estimate, before.states().at(key.id).estimate);
      } else {
        applied.segment<3>(off[k]) = s.landmarks().at(key.id).estimate.params() -
                                     before.landmarks().at(key.id).estimate.params();
      }
    }
    EXPECT_LT((applied - delta).norm() / delta.norm(), 1e-8) << to_string(f);
  }
}

// (J^T J)^-1 in extended precision.
MatX ld_inverse_information(const MatX& j) {
  using MatL = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  const MatL jl = j.cast<long double>();
  const MatL h = jl.transpose() * jl;
  return MatL(h.ldlt().solve(MatL::Identity(h.rows(), h.cols()))).cast<double>();
}

TEST(Marginalize, PreservesRetainedCovariance) {
  for (ErrorFormulation f : kBoth) {
    SmootherConfig c = prior_config(f);
    c.prior_rank_tol = 1e-16;
    WindowRunner run(short_stream(), c, false);
    run.run_frames(13);
    FixedLagSmoother& s = run.smoother();
    ASSERT_TRUE(s.needs_marginalization());
    const JacobianTrace t0 = s.trace();
    const MatX j0 = t0.dense();
    const MatX cov0 = ld_inverse_information(j0);
    s.marginalize();
    ASSERT_TRUE(s.prior().has_value());
    const JacobianTrace t1 = s.trace();
    const MatX j1 = t1.dense();
    const MatX cov1 = ld_inverse_information(j1);

    std::map<VarKey, int> off0;
    const std::vector<int> o0 = t0.column_offsets();
    for (size_t k = 0; k < t0.columns.size(); ++k) off0[t0.columns[k]] = o0[k];
    const std::vector<int> o1 = t1.column_offsets();
    std::vector<int> idx;
    for (size_t k = 0; k < t1.columns.size(); ++k) {
      ASSERT_TRUE(off0.count(t1.columns[k]));
      for (int d = 0; d < t1.columns[k].dim(); ++d) idx.push_back(off0[t1.columns[k]] + d);
    }
    MatX expect(idx.size(), idx.size());
    for (size_t a = 0; a < idx.size(); ++a) {
      for (size_t b = 0; b < idx.size(); ++b) expect(a, b) = cov0(idx[a], idx[b]);
    }
    EXPECT_LT((cov1 - expect).cwiseAbs().maxCoeff(), 1e-9) << to_string(f);

    // The Gauss-Newton step on the retained variables is unchanged.
    const VecX step0 = cov0 * (-(j0.transpose() * stacked_residual(t0)));
    const VecX step1 = cov1 * (-(j1.transpose() * stacked_residual(t1)));
    VecX expect_step(idx.size());
    for (size_t a = 0; a < idx.size(); ++a) expect_step(a) = step0(idx[a]);
    EXPECT_LT((step1 - expect_step).norm() / expect_step.norm(), 1e-8) << to_string(f);
  }
}

TEST(Marginalize, NothingOlderThanHorizonThrows) {
  WindowRunner run(short_stream(), prior_config(ErrorFormulation::RightInvariant), false);
  run.run_frames(3);
  EXPECT_FALSE(run.smoother().needs_marginalization());
  try {
    run.smoother().marginalize();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NothingToMarginalize);
  }
}

TEST(Marginalize, RemovesOldStatesAndAnchoredLandmarks) {
  WindowRunner run(short_stream(), prior_config(ErrorFormulation::RightInvariant), false);
  run.run_frames(15);
  FixedLagSmoother& s = run.smoother();
  const double t_m = s.latest_stamp() - s.config().horizon;
  const int removed = s.marginalize();
  EXPECT_GT(removed, 0);
  for (const auto& [id, v] : s.states()) EXPECT_GE(v.estimate.stamp, t_m - 1e-9);
  for (const auto& [id, l] : s.landmarks()) EXPECT_TRUE(s.states().count(s.anchor_of(id)));
  for (const auto& f : s.reprojection_factors()) EXPECT_TRUE(s.states().count(f.frame));
  for (const auto& f : s.imu_factors()) {
    EXPECT_TRUE(s.states().count(f.from));
    EXPECT_TRUE(s.states().count(f.to));
  }
  for (const VarKey& k : s.prior()->vars) {
    if (k.is_state()) {
      EXPECT_TRUE(s.states().count(k.id));
    } else {
      EXPECT_TRUE(s.landmarks().count(k.id));
    }
  }
}

TEST(Session, ShortSessionNeverMarginalizes) {
  const sim::SimStream st = sim::simulate(testing::short_sim(0.2), 3);
  ASSERT_EQ(st.frames.size(), 3u);
  const SessionResult r = run_session(st.measurements(), prior_config(ErrorFormulation::RightInvariant),
                                      st.truth[0]);
  EXPECT_FALSE(r.failed);
  EXPECT_EQ(r.marginalizations, 0);
  EXPECT_EQ(r.steps.size(), 3u);
}

TEST(Session, MarginalizationCountAndAccuracy) {
  const double duration = 30.0;
  SmootherConfig c = prior_config(ErrorFormulation::RightInvariant);
  const sim::SimStream st = sim::simulate(testing::short_sim(duration), 5);
  const SessionResult r = run_session(st.measurements(), c, st.truth[0]);
  ASSERT_FALSE(r.failed) << r.failure;
  const int expect = static_cast<int>(std::floor(duration - c.horizon) * 10.0);
  EXPECT_LE(std::abs(r.marginalizations - expect), 1);
  EXPECT_EQ(r.steps.back().marginalizations, r.marginalizations);
  for (const StepOutput& o : r.steps) {
    EXPECT_LT((o.nav_cov - o.nav_cov.transpose()).norm(), 1e-9 * o.nav_cov.norm());
  }
  EXPECT_LT((r.steps.back().estimate.p() - st.truth.back().p()).norm(), 1.0);
}

}  // namespace
}  // namespace rifls
