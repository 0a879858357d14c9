#include "grassflow/record.hpp"

#include "grassflow/flow_core.hpp"

namespace grassflow {


DiagnosticsRecord make_record(const Matrix& U, const Matrix& HU, double t, double dt_used) {
  DiagnosticsRecord r;
  r.t = t;
  r.dt_used = dt_used;
  const Matrix R = symmetrize(U.transpose() * HU);
  const Matrix G = gram(U).value;
  r.energy = 0.5 * frobenius_inner(U, HU);
  r.grad_norm = (HU - U * R).norm();
  r.defect = (Matrix::Identity(G.rows(), G.cols()) - G).norm();
  r.gram_eigs = symmetric_eigenvalues(G);
  r.ritz_values = symmetric_eigenvalues(R);
  r.c0_emp = r.ritz_values.size() > 0 ? -r.ritz_values.maxCoeff() : 0.0;
  return r;
}

}  // namespace grassflow
