#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace grassflow {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

enum class OperatorKind { dense, tridiagonal, matrix_free };

/**
 * A symmetric linear operator on R^n, exposed only through its action on
 * column blocks. Handles are immutable and cheap to copy; the underlying
 * storage is shared. A handle always represents A - sI where A is the stored
 * operator and s is shift().
 */
class Operator {
 public:
  using ApplyFn = std::function<Matrix(const Matrix&)>;

  Index dim() const noexcept { return dim_; }
  OperatorKind kind() const noexcept;
  double shift() const noexcept { return shift_; }
  bool symmetry_checked() const noexcept;

  /// Y = (A - sI) X. Throws DimensionMismatch if X.rows() != dim().
  Matrix apply(const Matrix& X) const;

  bool dense_representable() const noexcept {
    return kind() != OperatorKind::matrix_free;
  }

  /// Assembled (A - sI). Throws NotDenseRepresentable for matrix-free handles.
  Matrix to_dense() const;

  /// Upper spectral bound for the unshifted operator, if one was supplied
  /// with a matrix-free callback.
  std::optional<double> supplied_upper_bound() const noexcept;

  /// Row-sum bounds for the unshifted stored matrix (dense/tridiagonal only).
  std::pair<double, double> unshifted_gershgorin() const;

 private:
  struct Storage;

  Operator(std::shared_ptr<const Storage> storage, Index dim, double shift)
      : storage_(std::move(storage)), dim_(dim), shift_(shift) {}

  std::shared_ptr<const Storage> storage_;
  Index dim_ = 0;
  double shift_ = 0.0;

  friend Operator build_dense(const Matrix& matrix);
  friend Operator build_tridiagonal(Vector diagonal, Vector off_diagonal);
  friend Operator build_matrix_free(Index dim, ApplyFn apply,
                                    std::optional<double> upper_bound);
  friend Operator shift_operator(const Operator& op, double s);
};

/// Dense symmetric operator. Rejects non-square input and asymmetry beyond
/// 1e-12 relative to the largest entry; stores the exact symmetric part.
Operator build_dense(const Matrix& matrix);

/// Symmetric tridiagonal operator with main diagonal `diagonal` (length n)
/// and sub/super-diagonal `off_diagonal` (length n-1).
Operator build_tridiagonal(Vector diagonal, Vector off_diagonal);

/// Callback operator. The callback must be linear and symmetric; this is not
/// verified. `upper_bound`, when given, must bound the largest eigenvalue.
Operator build_matrix_free(Index dim, Operator::ApplyFn apply,
                           std::optional<double> upper_bound = std::nullopt);

/// (1/h^2) tridiag(-1, 2, -1) on m interior points of [0, L], Dirichlet
/// boundary, h = L / (m + 1).
Operator build_laplacian_1d(Index m, double domain_length);

/// Same stencil as build_laplacian_1d wrapped as a matrix-free callback with
/// the analytic upper bound 4/h^2 supplied.
Operator build_laplacian_1d_matrix_free(Index m, double domain_length);

/// Finite-difference -u'' + omega^2 (x - L/2)^2 u, Dirichlet boundary.
Operator build_schrodinger_1d(Index m, double domain_length, double omega);

/// Handle for H - sI. Composes with any existing shift.
Operator shift_operator(const Operator& op, double s);

/// max_i (M_ii + sum_{j != i} |M_ij|) of the shifted operator.
/// Matrix-free handles need a supplied bound, otherwise UnboundedMatrixFree.
double gershgorin_upper_bound(const Operator& op);

/// min_i (M_ii - sum_{j != i} |M_ij|) of the shifted operator
/// (dense/tridiagonal only).
double gershgorin_lower_bound(const Operator& op);

/// Gershgorin upper bound plus a 1% margin: shifting by this value leaves
/// every eigenvalue strictly negative.
double default_shift(const Operator& op);

/// Power-iteration estimate of the spectral radius (seeded, fixed step count).
double estimate_spectral_radius(const Operator& op, int steps,
                                std::uint64_t seed);

/// Ascending slice of the spectrum, optionally with the next eigenvalue.
class SpectrumSlice {
 public:
  explicit SpectrumSlice(std::vector<double> eigenvalues,
                         std::optional<double> next = std::nullopt);

  const std::vector<double>& eigenvalues() const noexcept { return values_; }
  std::optional<double> next() const noexcept { return next_; }
  std::optional<double> gap() const noexcept;

 private:
  std::vector<double> values_;
  std::optional<double> next_;
};

}  // namespace grassflow
