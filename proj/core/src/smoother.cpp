#include "rifls/smoother.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "rifls/error.hpp"

namespace rifls {

namespace {

constexpr double kStampEps = 1e-9;
constexpr double kLambdaMin = 1e-12;
constexpr double kLambdaMax = 1e12;

double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

bool finite_state(const SystemState& x) {
  return x.R().allFinite() && x.v().allFinite() && x.p().allFinite() && x.bias_g.allFinite() &&
         x.bias_a.allFinite();
}

}  // namespace

void SmootherConfig::validate() const {
  if (!(horizon > 0.0)) throw Error(ErrorCode::InvalidConfig, "horizon must be positive");
  if (fej && formulation != ErrorFormulation::Traditional) {
    throw Error(ErrorCode::InvalidConfig, "fej requires the traditional formulation");
  }
  if (max_outer_iters < 1) throw Error(ErrorCode::InvalidConfig, "max_outer_iters must be >= 1");
  if (!(lm_lambda_init > 0.0)) throw Error(ErrorCode::InvalidConfig, "lm_lambda_init must be > 0");
  if (!(convergence_tol > 0.0)) throw Error(ErrorCode::InvalidConfig, "convergence_tol must be > 0");
  if (!(function_tol >= 0.0)) throw Error(ErrorCode::InvalidConfig, "function_tol must be >= 0");
  if (!(pixel_sigma > 0.0)) throw Error(ErrorCode::InvalidConfig, "pixel_sigma must be > 0");
  if (min_parallax_deg < 0.0) throw Error(ErrorCode::InvalidConfig, "min_parallax_deg must be >= 0");
  if (initial_prior.enabled &&
      !(initial_prior.sigma_rot > 0.0 && initial_prior.sigma_vel > 0.0 &&
        initial_prior.sigma_pos > 0.0 && initial_prior.sigma_bg > 0.0 &&
        initial_prior.sigma_ba > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "initial prior sigmas must be > 0");
  }
  imu_noise.validate();
  camera.validate();
}

// Source of a linearized row, used to re-evaluate its residual at candidate
// estimates with the whitener frozen.
struct RowSource {
  FactorKind kind;
  size_t index;  // into imu_factors_ / reproj_factors_; unused otherwise
  MatX whitener;
};

struct FixedLagSmoother::Linearization {
  std::vector<TraceRow> rows;
  std::vector<RowSource> sources;
  double cost = 0.0;
  int dropped = 0;
};

namespace {

// Normal equations with landmarks that only appear in single-landmark rows
// kept as 3x3 blocks for elimination.
struct NormalEquations {
  struct Slot {
    bool dense;
    int offset;  // dense offset or sparse landmark index
  };
  struct SparseLandmark {
    VarKey key;
    Mat3 h = Mat3::Zero();
    Vec3 g = Vec3::Zero();
    std::vector<std::pair<int, MatX>> coupling;  // (dense offset, d x 3)

    MatX& block(int offset, int dim) {
      for (auto& [o, m] : coupling) {
        if (o == offset) return m;
      }
      coupling.emplace_back(offset, MatX::Zero(dim, 3));
      return coupling.back().second;
    }
  };

  std::map<VarKey, Slot> slots;
  std::vector<VarKey> dense_keys;
  std::vector<int> dense_offsets;
  int n_dense = 0;
  MatX h;
  VecX g;
  std::vector<SparseLandmark> sparse;

  void build(const std::vector<TraceRow>& rows, const std::vector<VarKey>& states) {
    std::set<VarKey> dense_landmarks;
    std::set<VarKey> all_landmarks;
    for (const TraceRow& r : rows) {
      int n_lm = 0;
      for (const VarKey& k : r.vars) {
        if (!k.is_state()) {
          ++n_lm;
          all_landmarks.insert(k);
        }
      }
      if (r.frozen || n_lm > 1) {
        for (const VarKey& k : r.vars) {
          if (!k.is_state()) dense_landmarks.insert(k);
        }
      }
    }
    for (const VarKey& k : states) {
      slots[k] = {true, n_dense};
      dense_keys.push_back(k);
      dense_offsets.push_back(n_dense);
      n_dense += 15;
    }
    for (const VarKey& k : dense_landmarks) {
      slots[k] = {true, n_dense};
      dense_keys.push_back(k);
      dense_offsets.push_back(n_dense);
      n_dense += 3;
    }
    for (const VarKey& k : all_landmarks) {
      if (dense_landmarks.count(k)) continue;
      slots[k] = {false, static_cast<int>(sparse.size())};
      sparse.push_back({k, Mat3::Zero(), Vec3::Zero(), {}});
    }
    h = MatX::Zero(n_dense, n_dense);
    g = VecX::Zero(n_dense);

    for (const TraceRow& r : rows) {
      const size_t nv = r.vars.size();
      std::vector<Slot> sl(nv);
      for (size_t i = 0; i < nv; ++i) sl[i] = slots.at(r.vars[i]);
      for (size_t i = 0; i < nv; ++i) {
        const MatX& bi = r.blocks[i];
        const int di = r.vars[i].dim();
        if (sl[i].dense) {
          g.segment(sl[i].offset, di) += bi.transpose() * r.residual;
        } else {
          sparse[sl[i].offset].g += bi.transpose() * r.residual;
        }
        for (size_t j = 0; j < nv; ++j) {
          const MatX& bj = r.blocks[j];
          const int dj = r.vars[j].dim();
          if (sl[i].dense && sl[j].dense) {
            h.block(sl[i].offset, sl[j].offset, di, dj) += bi.transpose() * bj;
          } else if (sl[i].dense && !sl[j].dense) {
            sparse[sl[j].offset].block(sl[i].offset, di) += bi.transpose() * bj;
          } else if (!sl[i].dense && !sl[j].dense) {
            sparse[sl[i].offset].h += bi.transpose() * bj;
          }
        }
      }
    }
  }

  // Solves (H + lambda I) d = -g; returns d in dense order followed by the
  // sparse landmarks in order. One refinement pass against the unreduced
  // system recovers the accuracy lost to cancellation in the Schur complement.
  bool solve(double lambda, VecX& d_dense, std::vector<Vec3>& d_sparse) const {
    MatX s = h;
    s.diagonal().array() += lambda;
    std::vector<Mat3> hinv(sparse.size());
    for (size_t l = 0; l < sparse.size(); ++l) {
      const SparseLandmark& lm = sparse[l];
      Mat3 hl = lm.h;
      hl.diagonal().array() += lambda;
      hinv[l] = hl.inverse();
      for (const auto& [oa, ca] : lm.coupling) {
        const MatX cah = ca * hinv[l];
        for (const auto& [ob, cb] : lm.coupling) {
          s.block(oa, ob, ca.rows(), cb.rows()).noalias() -= cah * cb.transpose();
        }
      }
    }
    // Jacobi scaling: bias and pose blocks differ by many orders of magnitude.
    VecX scale = s.diagonal().cwiseAbs().cwiseSqrt();
    for (Eigen::Index i = 0; i < scale.size(); ++i) {
      if (!(scale(i) > 0.0)) scale(i) = 1.0;
    }
    scale = scale.cwiseInverse();
    const MatX scaled = scale.asDiagonal() * s * scale.asDiagonal();
    Eigen::LDLT<MatX> ldlt(scaled);
    if (ldlt.info() != Eigen::Success) return false;

    // Solves the full system for right-hand side (bd, bs).
    const auto apply_inverse = [&](const VecX& bd, const std::vector<Vec3>& bs, VecX& xd,
                                   std::vector<Vec3>& xs) {
      VecX rhs = bd;
      for (size_t l = 0; l < sparse.size(); ++l) {
        const Vec3 w = hinv[l] * bs[l];
        for (const auto& [oa, ca] : sparse[l].coupling) rhs.segment(oa, ca.rows()) -= ca * w;
      }
      xd = scale.asDiagonal() * ldlt.solve(scale.asDiagonal() * rhs);
      xs.resize(sparse.size());
      for (size_t l = 0; l < sparse.size(); ++l) {
        Vec3 r = bs[l];
        for (const auto& [oa, ca] : sparse[l].coupling) r -= ca.transpose() * xd.segment(oa, ca.rows());
        xs[l] = hinv[l] * r;
      }
    };

    std::vector<Vec3> gs(sparse.size());
    for (size_t l = 0; l < sparse.size(); ++l) gs[l] = -sparse[l].g;
    apply_inverse(-g, gs, d_dense, d_sparse);
    if (!d_dense.allFinite()) return false;

    VecX rd = -g - h * d_dense - lambda * d_dense;
    std::vector<Vec3> rs(sparse.size());
    for (size_t l = 0; l < sparse.size(); ++l) {
      const SparseLandmark& lm = sparse[l];
      rs[l] = -lm.g - lm.h * d_sparse[l] - lambda * d_sparse[l];
      for (const auto& [oa, ca] : lm.coupling) {
        rd.segment(oa, ca.rows()) -= ca * d_sparse[l];
        rs[l] -= ca.transpose() * d_dense.segment(oa, ca.rows());
      }
    }
    VecX cd;
    std::vector<Vec3> cs;
    apply_inverse(rd, rs, cd, cs);
    if (!cd.allFinite()) return false;
    d_dense += cd;
    for (size_t l = 0; l < sparse.size(); ++l) d_sparse[l] += cs[l];
    return true;
  }

  // Sum of squared linearized residuals r + J d over the rows.
  double model_cost(const std::vector<TraceRow>& rows, const VecX& d_dense,
                    const std::vector<Vec3>& d_sparse) const {
    double c = 0.0;
    for (const TraceRow& r : rows) {
      VecX e = r.residual;
      for (size_t i = 0; i < r.vars.size(); ++i) {
        const Slot& sl = slots.at(r.vars[i]);
        if (sl.dense) {
          e.noalias() += r.blocks[i] * d_dense.segment(sl.offset, r.vars[i].dim());
        } else {
          e.noalias() += r.blocks[i] * d_sparse[sl.offset];
        }
      }
      c += e.squaredNorm();
    }
    return c;
  }

  // Block of (H + floor I)^-1 for the dense variable at `offset`.
  Mat15 covariance_block(double floor, int offset) const {
    MatX s = h;
    s.diagonal().array() += floor;
    for (const SparseLandmark& lm : sparse) {
      Mat3 hl = lm.h;
      hl.diagonal().array() += floor;
      const Mat3 hinv = hl.inverse();
      for (const auto& [oa, ca] : lm.coupling) {
        const MatX cah = ca * hinv;
        for (const auto& [ob, cb] : lm.coupling) {
          s.block(oa, ob, ca.rows(), cb.rows()).noalias() -= cah * cb.transpose();
        }
      }
    }
    MatX e = MatX::Zero(s.rows(), 15);
    e.block<15, 15>(offset, 0).setIdentity();
    Eigen::LDLT<MatX> ldlt(s);
    const MatX x = ldlt.solve(e);
    Mat15 c = x.block<15, 15>(offset, 0);
    return 0.5 * (c + c.transpose());
  }
};

}  // namespace

FixedLagSmoother::FixedLagSmoother(SmootherConfig config) : config_(std::move(config)) {
  config_.validate();
}

void FixedLagSmoother::initialize(FrameId id, const SystemState& x0,
                                  const std::vector<Observation>& obs) {
  if (!states_.empty()) throw Error(ErrorCode::NonMonotoneStamp, "smoother already initialized");
  states_[id] = StateVar{x0, std::nullopt};
  if (config_.initial_prior.enabled) {
    const InitialPriorConfig& p = config_.initial_prior;
    Vec15 s;
    s << Vec3::Constant(p.sigma_rot), Vec3::Constant(p.sigma_vel), Vec3::Constant(p.sigma_pos),
        Vec3::Constant(p.sigma_bg), Vec3::Constant(p.sigma_ba);
    initial_prior_ =
        InitialPrior{next_factor_id_++, id, x0, Mat15(s.cwiseInverse().asDiagonal())};
  }
  add_observations(id, obs);
}

void FixedLagSmoother::add_frame(FrameId id, double stamp, const std::vector<ImuSample>& imu,
                                 const std::vector<Observation>& obs) {
  if (states_.empty()) throw Error(ErrorCode::NonMonotoneStamp, "smoother not initialized");
  const FrameId prev = latest();
  const SystemState& xp = states_.at(prev).estimate;
  if (!(stamp > xp.stamp + kStampEps) || id <= prev) {
    throw Error(ErrorCode::NonMonotoneStamp, "frame stamp " + std::to_string(stamp) +
                                                 " does not follow " + std::to_string(xp.stamp));
  }
  if (imu.empty() || imu.front().stamp > xp.stamp + kStampEps ||
      imu.back().stamp < stamp - kStampEps) {
    throw Error(ErrorCode::MissingImuCoverage,
                "IMU batch does not span [" + std::to_string(xp.stamp) + ", " +
                    std::to_string(stamp) + "]");
  }
  SystemState x = propagate_state(xp, imu, stamp);
  x.stamp = stamp;
  states_[id] = StateVar{x, std::nullopt};
  imu_factors_.push_back(ImuFactor{next_factor_id_++, prev, id, imu});
  add_observations(id, obs);
}

void FixedLagSmoother::add_observations(FrameId id, const std::vector<Observation>& obs) {
  for (const Observation& z : obs) {
    if (landmarks_.count(z.landmark)) {
      reproj_factors_.push_back(
          ReprojectionFactor{next_factor_id_++, id, z.landmark, z.uv, z.sigma});
      continue;
    }
    pending_[z.landmark].push_back(PendingView{id, z.uv, z.sigma});
    try_admit(z.landmark);
  }
}

void FixedLagSmoother::try_admit(LandmarkId l) {
  auto it = pending_.find(l);
  const std::vector<PendingView>& views = it->second;
  if (views.size() < 2) return;
  const double gate = deg2rad(config_.min_parallax_deg);
  std::vector<TrackView> track;
  track.reserve(views.size());
  for (const PendingView& v : views) track.push_back({&states_.at(v.frame).estimate, v.uv});
  if (!disparity_gate(config_.camera, track, gate)) return;

  const PendingView& anchor = views.front();
  const SystemState& xa = states_.at(anchor.frame).estimate;
  size_t best = 1;
  double best_angle = -1.0;
  for (size_t i = 1; i < views.size(); ++i) {
    const double a =
        ray_angle(config_.camera, xa, states_.at(views[i].frame).estimate, anchor.uv, views[i].uv);
    if (a > best_angle) {
      best_angle = a;
      best = i;
    }
  }
  InverseDepthLandmark f;
  try {
    f = initialize_landmark(config_.camera, xa, states_.at(views[best].frame).estimate, anchor.uv,
                            views[best].uv, gate);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::LowDisparity) return;
    throw;
  }
  f.anchor = anchor.frame;
  landmarks_[l] = LandmarkVar{f};
  anchors_[l] = anchor.frame;
  for (const PendingView& v : views) {
    reproj_factors_.push_back(ReprojectionFactor{next_factor_id_++, v.frame, l, v.uv, v.sigma});
  }
  pending_.erase(it);
}

const SystemState& FixedLagSmoother::eval_point(FrameId id) const {
  const StateVar& s = states_.at(id);
  if (config_.fej && s.first_estimate) return *s.first_estimate;
  return s.estimate;
}

std::vector<TraceRow> FixedLagSmoother::linearize_factors(
    const std::vector<const ImuFactor*>& imu, const std::vector<const ReprojectionFactor*>& reproj,
    bool include_initial, bool include_prior, int* dropped, std::vector<MatX>* whiteners) const {
  const ErrorFormulation form = config_.formulation;
  std::vector<TraceRow> rows;
  rows.reserve(imu.size() + reproj.size() + 2);

  for (const ImuFactor* fac : imu) {
    const SystemState& x0 = states_.at(fac->from).estimate;
    const SystemState& x1 = states_.at(fac->to).estimate;
    PropagationResult prop = propagate(x0, fac->samples, x1.stamp, config_.imu_noise, form);
    const ErrorVector r = imu_residual(form, x1, prop.state);
    const ImuResidualJacobians a =
        imu_residual_jacobians(form, config_.imu_jac_mode, x1, prop.state);
    if (form == ErrorFormulation::Traditional) {
      prop.phi.block<9, 9>(0, 0) =
          nav_transition(form, eval_point(fac->from), eval_point(fac->to), x1.stamp - x0.stamp);
    }
    const ProcessNoiseWeight w = process_noise_weight(prop, a.a_pred);
    TraceRow row;
    row.factor = fac->id;
    row.kind = FactorKind::Imu;
    row.vars = {VarKey::state(fac->from), VarKey::state(fac->to)};
    row.blocks = {w.sqrt_info * a.a_pred * prop.phi, w.sqrt_info * a.a_i};
    row.residual = w.sqrt_info * r;
    rows.push_back(std::move(row));
    if (whiteners) whiteners->push_back(w.sqrt_info);
  }

  for (const ReprojectionFactor* fac : reproj) {
    const FrameId anchor = anchors_.at(fac->landmark);
    const InverseDepthLandmark& f = landmarks_.at(fac->landmark).estimate;
    const bool same = anchor == fac->frame;
    Vec2 r;
    ReprojectionJacobians j;
    try {
      r = project(config_.camera, states_.at(fac->frame).estimate, states_.at(anchor).estimate, f) -
          fac->uv;
      j = reprojection_jacobians(form, config_.camera, eval_point(fac->frame), eval_point(anchor),
                                 f, same);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BehindCamera) throw;
      if (dropped) ++*dropped;
      continue;
    }
    const double wi = 1.0 / fac->sigma;
    TraceRow row;
    row.factor = fac->id;
    row.kind = FactorKind::Reprojection;
    Mat2x15 ji = Mat2x15::Zero();
    ji.leftCols<9>() = j.pi_i * wi;
    if (same) {
      row.vars = {VarKey::state(fac->frame), VarKey::landmark(fac->landmark)};
      row.blocks = {ji, j.f * wi};
    } else {
      Mat2x15 ja = Mat2x15::Zero();
      ja.leftCols<9>() = j.pi_a * wi;
      row.vars = {VarKey::state(fac->frame), VarKey::state(anchor),
                  VarKey::landmark(fac->landmark)};
      row.blocks = {ji, ja, j.f * wi};
    }
    row.residual = r * wi;
    rows.push_back(std::move(row));
    if (whiteners) whiteners->push_back(MatX::Identity(2, 2) * wi);
  }

  if (include_initial && initial_prior_) {
    const InitialPrior& p = *initial_prior_;
    TraceRow row;
    row.factor = p.id;
    row.kind = FactorKind::InitialPrior;
    row.vars = {VarKey::state(p.frame)};
    row.blocks = {p.sqrt_info};
    row.residual = p.sqrt_info * error(form, states_.at(p.frame).estimate, p.mean);
    rows.push_back(std::move(row));
    if (whiteners) whiteners->push_back(p.sqrt_info);
  }

  if (include_prior && prior_) {
    const MarginalPrior& p = *prior_;
    std::vector<VarValue> current;
    current.reserve(p.vars.size());
    for (const VarKey& k : p.vars) {
      if (k.is_state()) {
        current.emplace_back(states_.at(k.id).estimate);
      } else {
        current.emplace_back(landmarks_.at(k.id).estimate);
      }
    }
    TraceRow row;
    row.factor = prior_id_;
    row.kind = FactorKind::MarginalPrior;
    row.frozen = true;
    row.vars = p.vars;
    const std::vector<int> off = p.offsets();
    for (size_t i = 0; i < p.vars.size(); ++i) {
      row.blocks.push_back(p.jacobian.middleCols(off[i], p.vars[i].dim()));
    }
    row.residual = p.residual(form, current);
    row.lin_points = p.lin_points;
    rows.push_back(std::move(row));
    if (whiteners) whiteners->push_back(MatX());
  }
  return rows;
}

FixedLagSmoother::Linearization FixedLagSmoother::linearize() const {
  std::vector<const ImuFactor*> imu;
  for (const ImuFactor& f : imu_factors_) imu.push_back(&f);
  std::vector<const ReprojectionFactor*> reproj;
  for (const ReprojectionFactor& f : reproj_factors_) reproj.push_back(&f);

  Linearization lin;
  std::vector<MatX> whiteners;
  lin.rows = linearize_factors(imu, reproj, true, true, &lin.dropped, &whiteners);

  std::map<FactorId, size_t> imu_index;
  for (size_t k = 0; k < imu_factors_.size(); ++k) imu_index[imu_factors_[k].id] = k;
  std::map<FactorId, size_t> reproj_index;
  for (size_t k = 0; k < reproj_factors_.size(); ++k) reproj_index[reproj_factors_[k].id] = k;
  for (size_t k = 0; k < lin.rows.size(); ++k) {
    const TraceRow& row = lin.rows[k];
    RowSource src{row.kind, 0, std::move(whiteners[k])};
    if (row.kind == FactorKind::Imu) src.index = imu_index.at(row.factor);
    if (row.kind == FactorKind::Reprojection) src.index = reproj_index.at(row.factor);
    lin.sources.push_back(std::move(src));
    lin.cost += row.residual.squaredNorm();
  }
  return lin;
}

double FixedLagSmoother::evaluate_cost(const std::map<FrameId, StateVar>& states,
                                       const std::map<LandmarkId, LandmarkVar>& landmarks,
                                       const Linearization& lin) const {
  const ErrorFormulation form = config_.formulation;
  double cost = 0.0;
  try {
    for (const RowSource& src : lin.sources) {
      switch (src.kind) {
        case FactorKind::Imu: {
          const ImuFactor& f = imu_factors_[src.index];
          const SystemState& x1 = states.at(f.to).estimate;
          const SystemState pred = propagate_state(states.at(f.from).estimate, f.samples, x1.stamp);
          cost += (src.whitener * imu_residual(form, x1, pred)).squaredNorm();
          break;
        }
        case FactorKind::Reprojection: {
          const ReprojectionFactor& f = reproj_factors_[src.index];
          const FrameId a = anchors_.at(f.landmark);
          const Vec2 r = project(config_.camera, states.at(f.frame).estimate,
                                 states.at(a).estimate, landmarks.at(f.landmark).estimate) -
                         f.uv;
          cost += (src.whitener * r).squaredNorm();
          break;
        }
        case FactorKind::InitialPrior: {
          const InitialPrior& p = *initial_prior_;
          cost += (src.whitener * error(form, states.at(p.frame).estimate, p.mean)).squaredNorm();
          break;
        }
        case FactorKind::MarginalPrior: {
          std::vector<VarValue> current;
          for (const VarKey& k : prior_->vars) {
            if (k.is_state()) {
              current.emplace_back(states.at(k.id).estimate);
            } else {
              current.emplace_back(landmarks.at(k.id).estimate);
            }
          }
          cost += prior_->residual(form, current).squaredNorm();
          break;
        }
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BehindCamera || e.code() == ErrorCode::AngleNearPi) {
      return std::numeric_limits<double>::infinity();
    }
    throw;
  }
  return cost;
}

Mat15 FixedLagSmoother::latest_covariance(const Linearization& lin) const {
  std::vector<VarKey> state_keys;
  for (const auto& [id, s] : states_) state_keys.push_back(VarKey::state(id));
  NormalEquations ne;
  ne.build(lin.rows, state_keys);
  return ne.covariance_block(config_.covariance_floor, ne.slots.at(VarKey::state(latest())).offset);
}

StepOutput FixedLagSmoother::solve_and_update() {
  if (states_.empty()) throw Error(ErrorCode::NonMonotoneStamp, "smoother not initialized");
  const ErrorFormulation form = config_.formulation;
  StepOutput out;
  double lambda = config_.lm_lambda_init;

  std::vector<VarKey> state_keys;
  for (const auto& [id, s] : states_) state_keys.push_back(VarKey::state(id));

  Linearization lin = linearize();
  for (int it = 0; it < config_.max_outer_iters; ++it) {
    if (!std::isfinite(lin.cost)) throw Error(ErrorCode::DivergedStep, "non-finite cost");
    out.cost_history.push_back(lin.cost);
    NormalEquations ne;
    ne.build(lin.rows, state_keys);

    bool accepted = false;
    bool converged = false;
    while (true) {
      VecX dd;
      std::vector<Vec3> ds;
      double cand_cost = std::numeric_limits<double>::infinity();
      double predicted = 0.0;
      std::map<FrameId, StateVar> cand_states = states_;
      std::map<LandmarkId, LandmarkVar> cand_lms = landmarks_;
      double step_norm = std::numeric_limits<double>::infinity();
      if (ne.solve(lambda, dd, ds)) {
        step_norm = dd.size() ? dd.cwiseAbs().maxCoeff() : 0.0;
        for (const Vec3& d : ds) step_norm = std::max(step_norm, d.cwiseAbs().maxCoeff());
        predicted = lin.cost - ne.model_cost(lin.rows, dd, ds);
        for (size_t k = 0; k < ne.dense_keys.size(); ++k) {
          const VarKey& key = ne.dense_keys[k];
          const int o = ne.dense_offsets[k];
          if (key.is_state()) {
            SystemState& x = cand_states.at(key.id).estimate;
            x = retract(form, x, dd.segment<15>(o));
          } else {
            InverseDepthLandmark& f = cand_lms.at(key.id).estimate;
            f.alpha += dd(o);
            f.beta += dd(o + 1);
            f.rho = std::clamp(f.rho + dd(o + 2), kMinInverseDepth, kMaxInverseDepth);
          }
        }
        for (size_t l = 0; l < ne.sparse.size(); ++l) {
          InverseDepthLandmark& f = cand_lms.at(ne.sparse[l].key.id).estimate;
          f.alpha += ds[l](0);
          f.beta += ds[l](1);
          f.rho = std::clamp(f.rho + ds[l](2), kMinInverseDepth, kMaxInverseDepth);
        }
        cand_cost = evaluate_cost(cand_states, cand_lms, lin);
      }
      const bool small = step_norm < config_.convergence_tol;
      // The linear model can promise no meaningful decrease: the remaining
      // mismatch is below what the (approximate) Jacobians resolve.
      const bool flat = std::isfinite(step_norm) && predicted <= config_.function_tol * lin.cost;
      if (cand_cost <= lin.cost) {
        states_ = std::move(cand_states);
        landmarks_ = std::move(cand_lms);
        lambda = std::max(lambda / 10.0, kLambdaMin);
        accepted = true;
        converged = small || lin.cost - cand_cost <= config_.function_tol * lin.cost;
        break;
      }
      if (small || flat) {
        converged = true;
        break;
      }
      lambda = std::min(lambda * 10.0, kLambdaMax);
      if (++out.lambda_escalations > config_.max_lambda_escalations) {
        out.aborted = true;
        break;
      }
    }
    if (accepted) ++out.iterations;
    if (accepted) {
      for (const auto& [id, s] : states_) {
        if (!finite_state(s.estimate)) throw Error(ErrorCode::DivergedStep, "non-finite state");
      }
      lin = linearize();
    }
    if (converged || out.aborted || !accepted) break;
  }
  if (!std::isfinite(lin.cost)) throw Error(ErrorCode::DivergedStep, "non-finite cost");
  out.cost_history.push_back(lin.cost);

  out.frame = latest();
  out.stamp = latest_stamp();
  out.estimate = states_.at(out.frame).estimate;
  out.nav_cov = latest_covariance(lin);
  out.lm_count = static_cast<int>(landmarks_.size());
  out.dropped_factors = lin.dropped;
  dropped_ += lin.dropped;
  ++steps_;
  return out;
}

bool FixedLagSmoother::needs_marginalization() const {
  if (states_.size() < 2) return false;
  return states_.begin()->second.estimate.stamp < latest_stamp() - config_.horizon - kStampEps;
}

int FixedLagSmoother::marginalize() {
  if (states_.empty()) throw Error(ErrorCode::NothingToMarginalize, "empty window");
  const double t_m = latest_stamp() - config_.horizon;
  std::set<FrameId> removed_states;
  for (const auto& [id, s] : states_) {
    if (id != latest() && s.estimate.stamp < t_m - kStampEps) removed_states.insert(id);
  }
  if (removed_states.empty()) {
    throw Error(ErrorCode::NothingToMarginalize, "no state older than " + std::to_string(t_m));
  }
  std::set<LandmarkId> removed_lms;
  for (const auto& [l, a] : anchors_) {
    if (removed_states.count(a)) removed_lms.insert(l);
  }

  std::vector<const ImuFactor*> imu;
  for (const ImuFactor& f : imu_factors_) {
    if (removed_states.count(f.from) || removed_states.count(f.to)) imu.push_back(&f);
  }
  std::vector<const ReprojectionFactor*> reproj;
  for (const ReprojectionFactor& f : reproj_factors_) {
    if (removed_states.count(f.frame) || removed_lms.count(f.landmark) ||
        removed_states.count(anchors_.at(f.landmark))) {
      reproj.push_back(&f);
    }
  }
  const bool with_initial = initial_prior_ && removed_states.count(initial_prior_->frame);
  int dropped = 0;
  const std::vector<TraceRow> rows =
      linearize_factors(imu, reproj, with_initial, prior_.has_value(), &dropped);

  // Column order: removed variables first, then the boundary.
  std::vector<VarKey> removed_keys;
  std::set<VarKey> kept_set;
  for (FrameId id : removed_states) removed_keys.push_back(VarKey::state(id));
  for (LandmarkId l : removed_lms) removed_keys.push_back(VarKey::landmark(l));
  const std::set<VarKey> removed_set(removed_keys.begin(), removed_keys.end());
  for (const TraceRow& r : rows) {
    for (const VarKey& k : r.vars) {
      if (!removed_set.count(k)) kept_set.insert(k);
    }
  }
  std::vector<VarKey> order = removed_keys;
  const std::vector<VarKey> kept(kept_set.begin(), kept_set.end());
  order.insert(order.end(), kept.begin(), kept.end());
  std::map<VarKey, int> offset;
  int n = 0;
  int n_removed = 0;
  for (const VarKey& k : order) {
    offset[k] = n;
    n += k.dim();
    if (removed_set.count(k)) n_removed = n;
  }

  MatX h = MatX::Zero(n, n);
  VecX b = VecX::Zero(n);
  for (const TraceRow& r : rows) {
    for (size_t i = 0; i < r.vars.size(); ++i) {
      const int oi = offset.at(r.vars[i]);
      b.segment(oi, r.vars[i].dim()) += r.blocks[i].transpose() * r.residual;
      for (size_t j = 0; j < r.vars.size(); ++j) {
        const int oj = offset.at(r.vars[j]);
        h.block(oi, oj, r.vars[i].dim(), r.vars[j].dim()) += r.blocks[i].transpose() * r.blocks[j];
      }
    }
  }

  std::optional<MarginalPrior> next;
  if (!kept.empty()) {
    const SchurResult sc = schur_complement(h, b, n_removed);
    const SqrtFactor sf = sqrt_factor(sc.info, sc.gradient, config_.prior_rank_tol);
    if (sf.rank > 0) {
      MarginalPrior p;
      p.vars = kept;
      for (const VarKey& k : kept) {
        if (k.is_state()) {
          p.lin_points.emplace_back(states_.at(k.id).estimate);
        } else {
          p.lin_points.emplace_back(landmarks_.at(k.id).estimate);
        }
      }
      p.jacobian = sf.jacobian;
      p.residual0 = sf.residual;
      next = std::move(p);
    }
  }

  if (config_.fej) {
    for (const VarKey& k : kept) {
      if (!k.is_state()) continue;
      StateVar& s = states_.at(k.id);
      if (!s.first_estimate) s.first_estimate = s.estimate;
    }
  }

  std::set<FactorId> gone;
  for (const ImuFactor* f : imu) gone.insert(f->id);
  for (const ReprojectionFactor* f : reproj) gone.insert(f->id);
  std::erase_if(imu_factors_, [&](const ImuFactor& f) { return gone.count(f.id) > 0; });
  std::erase_if(reproj_factors_, [&](const ReprojectionFactor& f) { return gone.count(f.id) > 0; });
  if (with_initial) initial_prior_.reset();
  prior_ = std::move(next);
  prior_id_ = next_factor_id_++;
  for (FrameId id : removed_states) states_.erase(id);
  for (LandmarkId l : removed_lms) {
    landmarks_.erase(l);
    anchors_.erase(l);
  }
  for (auto it = pending_.begin(); it != pending_.end();) {
    std::erase_if(it->second,
                  [&](const PendingView& v) { return removed_states.count(v.frame) > 0; });
    it = it->second.empty() ? pending_.erase(it) : std::next(it);
  }
  ++marginalizations_;
  return static_cast<int>(removed_states.size());
}

JacobianTrace FixedLagSmoother::trace() const {
  const Linearization lin = linearize();
  JacobianTrace t;
  t.formulation = config_.formulation;
  t.step = steps_;
  t.stamp = latest_stamp();
  t.marginalizations = marginalizations_;
  std::set<VarKey> lms;
  for (const TraceRow& r : lin.rows) {
    for (const VarKey& k : r.vars) {
      if (!k.is_state()) lms.insert(k);
    }
  }
  for (const auto& [id, s] : states_) {
    t.columns.push_back(VarKey::state(id));
    t.states.push_back(StateEvalPoint{id, s.estimate, s.first_estimate});
  }
  t.columns.insert(t.columns.end(), lms.begin(), lms.end());
  t.rows = lin.rows;
  return t;
}

double FixedLagSmoother::cost() const { return linearize().cost; }

std::vector<std::pair<FactorId, VecX>> FixedLagSmoother::live_residuals() const {
  const ErrorFormulation form = config_.formulation;
  std::vector<std::pair<FactorId, VecX>> out;
  for (const ImuFactor& f : imu_factors_) {
    const SystemState& x1 = states_.at(f.to).estimate;
    const SystemState pred = propagate_state(states_.at(f.from).estimate, f.samples, x1.stamp);
    out.emplace_back(f.id, imu_residual(form, x1, pred));
  }
  for (const ReprojectionFactor& f : reproj_factors_) {
    const Vec2 r = project(config_.camera, states_.at(f.frame).estimate,
                           states_.at(anchors_.at(f.landmark)).estimate,
                           landmarks_.at(f.landmark).estimate) -
                   f.uv;
    out.emplace_back(f.id, r);
  }
  if (initial_prior_) {
    out.emplace_back(initial_prior_->id,
                     error(form, states_.at(initial_prior_->frame).estimate, initial_prior_->mean));
  }
  return out;
}

void FixedLagSmoother::apply_gauge(const GaugeTransform& xi) {
  for (auto& [id, s] : states_) {
    s.estimate = gauge_transform(xi, s.estimate);
    if (s.first_estimate) s.first_estimate = gauge_transform(xi, *s.first_estimate);
  }
  if (initial_prior_) initial_prior_->mean = gauge_transform(xi, initial_prior_->mean);
  if (prior_) {
    for (VarValue& v : prior_->lin_points) {
      if (auto* s = std::get_if<SystemState>(&v)) *s = gauge_transform(xi, *s);
    }
  }
}

SessionResult run_session(const MeasurementStream& stream, const SmootherConfig& config,
                          const SystemState& init, const SessionOptions& options) {
  SessionResult out;
  FixedLagSmoother s(config);
  try {
    for (size_t k = 0; k < stream.frames.size(); ++k) {
      const FrameMeasurements& fm = stream.frames[k];
      if (k == 0) {
        SystemState x0 = init;
        x0.stamp = fm.stamp;
        s.initialize(fm.id, x0, fm.observations);
      } else {
        const double t0 = s.latest_stamp();
        s.add_frame(fm.id, fm.stamp, slice_samples(stream.imu, t0, fm.stamp, 1), fm.observations);
      }
      out.steps.push_back(s.solve_and_update());
      if (options.trace_frames < 0 || static_cast<int>(k) < options.trace_frames) {
        out.traces.push_back(s.trace());
      }
      if (s.needs_marginalization()) s.marginalize();
      out.steps.back().marginalizations = s.marginalization_count();
    }
  } catch (const Error& e) {
    out.failed = true;
    out.failure = std::string(to_string(e.code())) + ": " + e.what();
  }
  out.marginalizations = s.marginalization_count();
  return out;
}

}  // namespace rifls
