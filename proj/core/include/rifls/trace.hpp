#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "rifls/marginalization.hpp"
#include "rifls/state.hpp"
#include "rifls/types.hpp"

namespace rifls {

using FactorId = std::int64_t;

enum class FactorKind : std::uint8_t { Imu, Reprojection, MarginalPrior, InitialPrior };

std::string_view to_string(FactorKind k);
FactorKind factor_kind_from_string(std::string_view s);

// One whitened factor of the stacked system: residual and Jacobian blocks, one
// per variable in `vars`. Frozen rows come from the marginal prior and carry
// the linearization points they were built at.
struct TraceRow {
  FactorId factor = 0;
  FactorKind kind = FactorKind::Imu;
  bool frozen = false;
  std::vector<VarKey> vars;
  std::vector<MatX> blocks;
  VecX residual;
  std::vector<VarValue> lin_points;

  int rows() const { return static_cast<int>(residual.size()); }
};

// Points at which a state's nullspace block may be evaluated.
struct StateEvalPoint {
  FrameId id = 0;
  SystemState latest;
  std::optional<SystemState> first_estimate;
};

// The stacked Jacobian the smoother solved at one step.
struct JacobianTrace {
  ErrorFormulation formulation = ErrorFormulation::RightInvariant;
  std::int64_t step = 0;
  double stamp = 0.0;
  int marginalizations = 0;
  std::vector<VarKey> columns;
  std::vector<StateEvalPoint> states;
  std::vector<TraceRow> rows;

  int cols() const;
  int total_rows() const;
  std::vector<int> column_offsets() const;
  // Dense stacked Jacobian in column order.
  MatX dense() const;
};

}  // namespace rifls
