#include "rifls/marginalization.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "rifls/error.hpp"

namespace rifls {

VecX var_error(ErrorFormulation f, const VarValue& value, const VarValue& lin) {
  if (const auto* s = std::get_if<SystemState>(&value)) {
    return error(f, *s, std::get<SystemState>(lin));
  }
  const auto& l = std::get<InverseDepthLandmark>(value);
  const auto& l0 = std::get<InverseDepthLandmark>(lin);
  return l.params() - l0.params();
}

int MarginalPrior::dim() const {
  int n = 0;
  for (const VarKey& k : vars) n += k.dim();
  return n;
}

std::vector<int> MarginalPrior::offsets() const {
  std::vector<int> out;
  out.reserve(vars.size());
  int n = 0;
  for (const VarKey& k : vars) {
    out.push_back(n);
    n += k.dim();
  }
  return out;
}

VecX MarginalPrior::residual(ErrorFormulation f, const std::vector<VarValue>& current) const {
  VecX dx(dim());
  const std::vector<int> off = offsets();
  for (size_t i = 0; i < vars.size(); ++i) {
    dx.segment(off[i], vars[i].dim()) = var_error(f, current[i], lin_points[i]);
  }
  return residual0 + jacobian * dx;
}

MatX inverse_sqrt_psd(const MatX& a, double floor) {
  Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (a + a.transpose()));
  const VecX d = es.eigenvalues().cwiseMax(floor).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * d.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

VecX jacobi_scale(const MatX& a) {
  VecX s = a.diagonal().cwiseAbs().cwiseSqrt();
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (!(s(i) > 0.0)) s(i) = 1.0;
  }
  return s;
}

}  // namespace

MatX psd_pseudo_inverse(const MatX& a, double rel_tol) {
  if (a.rows() == 0) return a;
  const VecX s = jacobi_scale(a);
  const VecX si = s.cwiseInverse();
  const MatX scaled = si.asDiagonal() * a * si.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (scaled + scaled.transpose()));
  const VecX& ev = es.eigenvalues();
  const double thresh = rel_tol * std::max(ev.maxCoeff(), 0.0);
  VecX inv(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) inv(i) = ev(i) > thresh ? 1.0 / ev(i) : 0.0;
  const MatX& u = es.eigenvectors();
  return si.asDiagonal() * (u * inv.asDiagonal() * u.transpose()) * si.asDiagonal();
}

SchurResult schur_complement(const MatX& h, const VecX& b, int n_removed, double rel_tol) {
  const int n = static_cast<int>(h.rows());
  const int k = n - n_removed;
  if (n_removed <= 0) throw Error(ErrorCode::NothingToMarginalize, "no coordinates to remove");
  const MatX hmm_inv = psd_pseudo_inverse(h.topLeftCorner(n_removed, n_removed), rel_tol);
  const MatX hkm = h.bottomLeftCorner(k, n_removed);
  const MatX t = hkm * hmm_inv;
  SchurResult out;
  out.info = h.bottomRightCorner(k, k) - t * hkm.transpose();
  out.info = 0.5 * (out.info + out.info.transpose());
  out.gradient = b.tail(k) - t * b.head(n_removed);
  return out;
}

SqrtFactor sqrt_factor(const MatX& info, const VecX& gradient, double rel_tol) {
  SqrtFactor out;
  const VecX s = jacobi_scale(info);
  const VecX si = s.cwiseInverse();
  const MatX scaled = si.asDiagonal() * info * si.asDiagonal();
  Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (scaled + scaled.transpose()));
  const VecX& ev = es.eigenvalues();
  const double thresh = rel_tol * std::max(ev.maxCoeff(), 0.0);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) > thresh) keep.push_back(i);
  }
  out.rank = static_cast<int>(keep.size());
  out.jacobian.resize(out.rank, info.cols());
  out.residual.resize(out.rank);
  const VecX g_scaled = si.asDiagonal() * gradient;
  for (int r = 0; r < out.rank; ++r) {
    const Eigen::Index i = keep[r];
    const VecX u = es.eigenvectors().col(i);
    const double sd = std::sqrt(ev(i));
    out.jacobian.row(r) = sd * (u.cwiseProduct(s)).transpose();
    out.residual(r) = u.dot(g_scaled) / sd;
  }
  return out;
}

}  // namespace rifls
