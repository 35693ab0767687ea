#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rifls/smoother.hpp"
#include "rifls/trace.hpp"

namespace rifls {

enum class NullspaceEval { Latest, FirstEstimates };

// Stacked gauge directions for every trace column: per-state nullspace blocks,
// zero for landmarks. FirstEstimates falls back to the latest estimate for
// states that never entered a prior.
MatX build_nullspace(const JacobianTrace& t, NullspaceEval mode);

struct RowDefect {
  FactorId factor = 0;
  FactorKind kind = FactorKind::Imu;
  bool frozen = false;
  double defect = 0.0;  // ||row * N||_F / ||J||_F
};

struct NullityReport {
  Vec4 column_defect = Vec4::Zero();  // ||J n_c|| / ||J||_F
  Vec4 spurious_info = Vec4::Zero();  // n_c^T J^T J n_c
  double jacobian_norm = 0.0;
  std::vector<RowDefect> worst_rows;  // descending, at most `max_rows`
};

// Columns are (rotation about gravity, x, y, z translation).
NullityReport nullity_audit(const JacobianTrace& t, NullspaceEval mode = NullspaceEval::Latest,
                            std::size_t max_rows = 5);

std::string audit_csv_header();
std::string audit_csv_row(const JacobianTrace& t, const NullityReport& r);

enum class PerturbTarget { BiasesAndLandmarks, NavStates };

struct IrrelevanceResult {
  NullityReport before;
  NullityReport after;
  double max_delta = 0.0;  // max |after - before| over the column defects
};

// Relinearizes a copy of the smoother after scaling the targeted variables by
// a random +-`fraction`, and compares the nullity defects. Zero-valued
// components are perturbed relative to a nominal magnitude.
IrrelevanceResult local_param_irrelevance_check(const FixedLagSmoother& s, double fraction,
                                                std::uint64_t seed,
                                                PerturbTarget target = PerturbTarget::BiasesAndLandmarks,
                                                NullspaceEval mode = NullspaceEval::Latest);

// Largest change of any live residual when every state is gauge transformed.
double gauge_residual_change(const FixedLagSmoother& s, const GaugeTransform& xi);

}  // namespace rifls
