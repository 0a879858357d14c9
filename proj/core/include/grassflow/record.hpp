#pragma once

#include "grassflow/operators.hpp"

namespace grassflow {

/// Per-sample scalars of a flow trajectory.
struct DiagnosticsRecord {
  double t = 0.0;
  double energy = 0.0;
  double grad_norm = 0.0;  // ||H U - U U^T H U||_F
  double defect = 0.0;     // ||I - U^T U||_F
  double dt_used = 0.0;
  Vector gram_eigs;        // ascending eigenvalues of U^T U
  Vector ritz_values;      // ascending eigenvalues of U^T H U
  double c0_emp = 0.0;     // -lambda_max(U^T H U)
};

/// Builds a record from U and a precomputed H U.
DiagnosticsRecord make_record(const Matrix& U, const Matrix& HU, double t, double dt_used);

}  // namespace grassflow
