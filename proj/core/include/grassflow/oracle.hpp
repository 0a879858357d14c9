#pragma once

#include <vector>

#include "grassflow/flow_core.hpp"

namespace grassflow {

/// Symmetric eigendecomposition M = Q diag(eigenvalues) Q^T, eigenvalues
/// ascending and eigenvector columns permuted to match.
struct EigenDecomposition {
  Vector eigenvalues;
  Matrix eigenvectors;
};

struct JacobiOptions {
  /// Stop once the off-diagonal Frobenius mass is <= tolerance * ||M||_F.
  double tolerance = 1e-14;
  int max_sweeps = 100;
};

/// Cyclic Jacobi rotations. Deliberately shares no code with the flow paths
/// (which use Eigen's solvers for small blocks), so it can act as an
/// independent reference. n <= 2048. Throws NoConvergence.
EigenDecomposition jacobi_eigensolver(const Matrix& M, const JacobiOptions& options = {});

/// exp(scale * M) for symmetric M via jacobi_eigensolver. n <= 512.
Matrix expm_sym(const Matrix& M, double scale);

/// M^{-1/2} for SPD M. Throws SingularMatrix if lambda_min(M) < 1e-12.
Matrix inv_sqrt_spd(const Matrix& M);

/**
 * Closed-form solution of dU/dt = -(HU - U U^T H U) with U(0) = U0:
 *
 *   U(t) = exp(-Ht) U0 [I - U0^T U0 + U0^T exp(-2Ht) U0]^{-1/2} Q(t),
 *
 * returned with the gauge Q(t) = I. Compare results with subspace_distance,
 * never entrywise. The decomposition of H is computed once, and both factors
 * are rescaled by exp(lambda_1 t) before combining, so large t does not
 * overflow.
 */
class AnalyticFlow {
 public:
  AnalyticFlow(const Matrix& H, const FrameBlock& U0);

  FrameBlock at(double t) const;

  const EigenDecomposition& decomposition() const noexcept { return eig_; }

 private:
  EigenDecomposition eig_;
  Matrix coeffs_;  // Q^T U0
  Matrix gram0_;
};

FrameBlock analytic_flow_solution(const Matrix& H, const FrameBlock& U0, double t);

/// Runs the closed form inside the span of the m lowest eigenvectors of H
/// (Galerkin restriction with orthogonal projection of U0) and lifts back.
FrameBlock galerkin_flow_solution(const Matrix& H, Index basis_size, const FrameBlock& U0,
                                  double t);

struct SmallSvd {
  Matrix U;                 // p x k, orthonormal columns, k = min(p, q)
  Vector singular_values;   // descending
  Matrix V;                 // q x k, orthonormal columns
};

/// Rows of C (n x N) picked greedily top to bottom, skipping rows that are
/// numerically in the span of rows already picked. At most N indices, ascending.
std::vector<Index> leading_rows(const Matrix& C);

/// Thin SVD from jacobi_eigensolver on M^T M with column recovery.
/// max(p, q) <= 2048, min(p, q) <= 64.
SmallSvd svd_small(const Matrix& M);

}  // namespace grassflow
