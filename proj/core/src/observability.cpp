#include "rifls/observability.hpp"

#include <algorithm>
#include <iomanip>
#include <random>
#include <sstream>

namespace rifls {

MatX build_nullspace(const JacobianTrace& t, NullspaceEval mode) {
  std::map<FrameId, const StateEvalPoint*> points;
  for (const StateEvalPoint& s : t.states) points[s.id] = &s;
  MatX n = MatX::Zero(t.cols(), 4);
  const std::vector<int> off = t.column_offsets();
  for (size_t i = 0; i < t.columns.size(); ++i) {
    const VarKey& k = t.columns[i];
    if (!k.is_state()) continue;
    const StateEvalPoint& p = *points.at(k.id);
    const SystemState& x =
        mode == NullspaceEval::FirstEstimates && p.first_estimate ? *p.first_estimate : p.latest;
    n.block<15, 4>(off[i], 0) = nullspace_block(t.formulation, x);
  }
  return n;
}

NullityReport nullity_audit(const JacobianTrace& t, NullspaceEval mode, std::size_t max_rows) {
  const MatX n = build_nullspace(t, mode);
  std::map<VarKey, int> off;
  const std::vector<int> o = t.column_offsets();
  for (size_t i = 0; i < t.columns.size(); ++i) off[t.columns[i]] = o[i];

  NullityReport rep;
  double jf2 = 0.0;
  std::vector<MatX> jn;
  jn.reserve(t.rows.size());
  for (const TraceRow& r : t.rows) {
    MatX acc = MatX::Zero(r.rows(), 4);
    for (size_t i = 0; i < r.vars.size(); ++i) {
      acc += r.blocks[i] * n.middleRows(off.at(r.vars[i]), r.vars[i].dim());
      jf2 += r.blocks[i].squaredNorm();
    }
    rep.spurious_info += acc.colwise().squaredNorm().transpose();
    jn.push_back(std::move(acc));
  }
  rep.jacobian_norm = std::sqrt(jf2);
  const double scale = rep.jacobian_norm > 0.0 ? 1.0 / rep.jacobian_norm : 0.0;
  rep.column_defect = rep.spurious_info.cwiseSqrt() * scale;

  std::vector<RowDefect> rows;
  rows.reserve(t.rows.size());
  for (size_t i = 0; i < t.rows.size(); ++i) {
    rows.push_back({t.rows[i].factor, t.rows[i].kind, t.rows[i].frozen, jn[i].norm() * scale});
  }
  const std::size_t k = std::min(max_rows, rows.size());
  std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(k), rows.end(),
                    [](const RowDefect& a, const RowDefect& b) {
                      return a.defect > b.defect || (a.defect == b.defect && a.factor < b.factor);
                    });
  rows.resize(k);
  rep.worst_rows = std::move(rows);
  return rep;
}

std::string audit_csv_header() {
  return "step,stamp,marginalizations,defect_rot,defect_x,defect_y,defect_z,"
         "spurious_rot,spurious_x,spurious_y,spurious_z,worst_factor,worst_kind,worst_defect";
}

std::string audit_csv_row(const JacobianTrace& t, const NullityReport& r) {
  std::ostringstream os;
  os << std::setprecision(17) << t.step << ',' << t.stamp << ',' << t.marginalizations;
  for (int c = 0; c < 4; ++c) os << ',' << r.column_defect(c);
  for (int c = 0; c < 4; ++c) os << ',' << r.spurious_info(c);
  if (r.worst_rows.empty()) {
    os << ",-1,,0";
  } else {
    const RowDefect& w = r.worst_rows.front();
    os << ',' << w.factor << ',' << to_string(w.kind) << ',' << w.defect;
  }
  return os.str();
}

namespace {

double bump(double v, double nominal, double fraction, std::mt19937_64& rng) {
  const double sign = (rng() & 1u) ? 1.0 : -1.0;
  return v + sign * fraction * std::max(std::abs(v), nominal);
}

}  // namespace

IrrelevanceResult local_param_irrelevance_check(const FixedLagSmoother& s, double fraction,
                                                std::uint64_t seed, PerturbTarget target,
                                                NullspaceEval mode) {
  IrrelevanceResult out;
  out.before = nullity_audit(s.trace(), mode);
  FixedLagSmoother copy = s;
  std::mt19937_64 rng(seed);
  if (target == PerturbTarget::BiasesAndLandmarks) {
    for (auto& [id, st] : copy.mutable_states()) {
      for (int i = 0; i < 3; ++i) {
        st.estimate.bias_g(i) = bump(st.estimate.bias_g(i), 1e-2, fraction, rng);
        st.estimate.bias_a(i) = bump(st.estimate.bias_a(i), 1e-1, fraction, rng);
      }
    }
    for (auto& [id, l] : copy.mutable_landmarks()) {
      l.estimate.alpha = bump(l.estimate.alpha, 0.1, fraction, rng);
      l.estimate.beta = bump(l.estimate.beta, 0.1, fraction, rng);
      l.estimate.rho = bump(l.estimate.rho, 0.0, fraction, rng);
    }
  } else {
    for (auto& [id, st] : copy.mutable_states()) {
      SystemState& x = st.estimate;
      for (int i = 0; i < 3; ++i) {
        x.nav.v(i) = bump(x.nav.v(i), 1.0, fraction, rng);
        x.nav.p(i) = bump(x.nav.p(i), 1.0, fraction, rng);
      }
      const Vec3 w(bump(0.0, 1.0, fraction, rng), bump(0.0, 1.0, fraction, rng),
                   bump(0.0, 1.0, fraction, rng));
      x.nav.r = lie::so3_exp(w) * x.nav.r;
    }
  }
  out.after = nullity_audit(copy.trace(), mode);
  out.max_delta = (out.after.column_defect - out.before.column_defect).cwiseAbs().maxCoeff();
  return out;
}

double gauge_residual_change(const FixedLagSmoother& s, const GaugeTransform& xi) {
  const auto before = s.live_residuals();
  FixedLagSmoother copy = s;
  copy.apply_gauge(xi);
  const auto after = copy.live_residuals();
  double worst = 0.0;
  for (size_t i = 0; i < before.size(); ++i) {
    worst = std::max(worst, (after[i].second - before[i].second).norm());
  }
  return worst;
}

}  // namespace rifls
