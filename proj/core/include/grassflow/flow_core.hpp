#pragma once

#include <cstdint>
#include <string>

#include "grassflow/operators.hpp"

namespace grassflow {

/// An n x N column block U = (u_1, ..., u_N) with finite entries and N <= n.
class FrameBlock {
 public:
  FrameBlock() = default;
  explicit FrameBlock(Matrix data);

  static FrameBlock zeros(Index n, Index width);

  const Matrix& matrix() const noexcept { return data_; }
  Index ambient_dim() const noexcept { return data_.rows(); }
  Index width() const noexcept { return data_.cols(); }

 private:
  Matrix data_;
};

/// U^T U, symmetrized.
struct GramMatrix {
  Matrix value;
};

/// U^T H U, symmetrized.
struct RayleighBlock {
  Matrix value;
};

/// Ascending eigenvalues of a small symmetric matrix.
Vector symmetric_eigenvalues(const Matrix& symmetric);

/// sum_ij A_ij B_ij with Neumaier-compensated summation.
double frobenius_inner(const Matrix& A, const Matrix& B);

/// (A + A^T) / 2
Matrix symmetrize(const Matrix& A);

/// E(U) = 1/2 tr(U^T H U).
double energy(const Operator& H, const FrameBlock& U);

/// Euclidean gradient H U.
FrameBlock gradient(const Operator& H, const FrameBlock& U);

/// H U - U (U^T H U). Defined on the whole space, not only on orthonormal U.
FrameBlock grassmann_gradient(const Operator& H, const FrameBlock& U);

/// Same as above when H U is already at hand.
Matrix grassmann_gradient(const Matrix& U, const Matrix& HU);

/// H U (U^T U) - U (U^T H U). Diagnostic only; never drives a flow.
FrameBlock extended_gradient(const Operator& H, const FrameBlock& U);

GramMatrix gram(const FrameBlock& U);
GramMatrix gram(const Matrix& U);

/// ||I_N - U^T U||_F
double ortho_defect(const FrameBlock& U);
double ortho_defect(const Matrix& U);

RayleighBlock rayleigh_block(const Operator& H, const FrameBlock& U);

struct AdmissibilityOptions {
  double eps_adm = 1e-10;
  double eps_rank = 1e-10;
  // Accept U^T H U <= 0 (semidefinite) instead of the strict gate.
  bool allow_semidefinite = false;
};

struct AdmissibilityReport {
  bool ok = false;
  double rayleigh_max_eig = 0.0;
  double gram_min_eig = 0.0;
  std::string reason;
};

/// ok iff lambda_max(U0^T H U0) < -eps_adm and lambda_min(U0^T U0) > eps_rank.
AdmissibilityReport admissible_initial(const Operator& H, const FrameBlock& U0,
                                       const AdmissibilityOptions& options = {});

enum class InitMode { sub_stiefel, stiefel, super_stiefel };

struct InitOptions {
  // Gram eigenvalues are drawn uniformly from these ranges. Their square
  // roots are the column scalings, so sub-Stiefel scalings lie in (0, 1] and
  // super-Stiefel scalings lie in [1, 2].
  double sub_gram_low = 0.75;
  double sub_gram_high = 0.95;
  double super_gram_low = 1.05;
  double super_gram_high = 1.25;
  int max_retries = 16;
  AdmissibilityOptions admissibility{};
};

/// Seeded random initial block satisfying admissible_initial. Retries filter
/// the block through (b I - H) for an upper spectral bound b, which tilts it
/// toward the low end of the spectrum. Throws AdmissibilityFailure after
/// options.max_retries filtered attempts.
FrameBlock random_admissible_initial(const Operator& H, Index width, std::uint64_t seed,
                                     InitMode mode, const InitOptions& options = {});

}  // namespace grassflow
