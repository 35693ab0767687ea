#pragma once

#include <compare>
#include <cstdint>
#include <variant>
#include <vector>

#include "rifls/state.hpp"
#include "rifls/types.hpp"

namespace rifls {

// Key of an estimation variable: a navigation/bias state or a landmark.
struct VarKey {
  enum class Kind : std::uint8_t { State, Landmark };
  Kind kind = Kind::State;
  std::int64_t id = 0;

  static VarKey state(FrameId id) { return {Kind::State, id}; }
  static VarKey landmark(LandmarkId id) { return {Kind::Landmark, id}; }
  bool is_state() const { return kind == Kind::State; }
  int dim() const { return is_state() ? 15 : 3; }

  auto operator<=>(const VarKey&) const = default;
};

using VarValue = std::variant<SystemState, InverseDepthLandmark>;

// Error coordinates of `value` relative to `lin` for either variable kind.
VecX var_error(ErrorFormulation f, const VarValue& value, const VarValue& lin);

// Linear factor left behind by marginalization, in square-root form. Its
// residual at the current values is r0 + J * [var_error(x_k, lin_k)]_k and
// its Jacobian is J, both independent of later estimates.
struct MarginalPrior {
  std::vector<VarKey> vars;
  std::vector<VarValue> lin_points;
  MatX jacobian;
  VecX residual0;

  int dim() const;
  std::vector<int> offsets() const;
  VecX residual(ErrorFormulation f, const std::vector<VarValue>& current) const;
};

// Symmetric inverse square root of a positive (semi)definite matrix; eigen
// values below `floor` are clamped to it.
MatX inverse_sqrt_psd(const MatX& a, double floor = 1e-300);

// Pseudo-inverse of a symmetric PSD matrix after Jacobi scaling. Directions
// whose scaled eigenvalue is below rel_tol * max are dropped.
MatX psd_pseudo_inverse(const MatX& a, double rel_tol = 1e-14);

struct SchurResult {
  MatX info;      // H_kk - H_km H_mm^+ H_mk
  VecX gradient;  // b_k - H_km H_mm^+ b_m
};

// Eliminates the first `n_removed` coordinates of the normal equations H d = -b
// (b = J^T r).
SchurResult schur_complement(const MatX& h, const VecX& b, int n_removed, double rel_tol = 1e-14);

struct SqrtFactor {
  MatX jacobian;
  VecX residual;
  int rank = 0;
};

// J, r0 with J^T J = info and J^T r0 = gradient on the retained range of
// `info`. Directions with Jacobi-scaled eigenvalue below rel_tol * max are
// dropped.
SqrtFactor sqrt_factor(const MatX& info, const VecX& gradient, double rel_tol = 1e-12);

}  // namespace rifls
