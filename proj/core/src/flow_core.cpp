#include "grassflow/flow_core.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "grassflow/error.hpp"

namespace grassflow {

FrameBlock::FrameBlock(Matrix data) : data_(std::move(data)) {
  if (data_.cols() > data_.rows()) {
    std::ostringstream msg;
    msg << "block width " << data_.cols() << " exceeds ambient dimension " << data_.rows();
    throw Error(ErrorCode::invalid_argument, msg.str());
  }
  if (!data_.allFinite()) {
    throw Error(ErrorCode::non_finite_state, "frame block contains NaN or Inf");
  }
}

FrameBlock FrameBlock::zeros(Index n, Index width) {
  return FrameBlock(Matrix::Zero(n, width));
}

Vector symmetric_eigenvalues(const Matrix& symmetric) {
  if (symmetric.size() == 0) return Vector();
  Eigen::SelfAdjointEigenSolver<Matrix> solver(symmetric, Eigen::EigenvaluesOnly);
  return solver.eigenvalues();
}

Matrix symmetrize(const Matrix& A) { return 0.5 * (A + A.transpose()); }

namespace {

void check_dims(const Operator& H, const FrameBlock& U) {
  if (H.dim() != U.ambient_dim()) {
    std::ostringstream msg;
    msg << "operator dimension " << H.dim() << " does not match block with "
        << U.ambient_dim() << " rows";
    throw Error(ErrorCode::dimension_mismatch, msg.str());
  }
}

}  // namespace

double frobenius_inner(const Matrix& A, const Matrix& B) {
  if (A.rows() != B.rows() || A.cols() != B.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "frobenius_inner: shapes differ");
  }
  double sum = 0.0;
  double c = 0.0;
  for (Index j = 0; j < A.cols(); ++j) {
    for (Index i = 0; i < A.rows(); ++i) {
      const double x = A(i, j) * B(i, j);
      const double t = sum + x;
      c += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
      sum = t;
    }
  }
  return sum + c;
}

double energy(const Operator& H, const FrameBlock& U) {
  check_dims(H, U);
  const Matrix HU = H.apply(U.matrix());
  return 0.5 * frobenius_inner(U.matrix(), HU);
}

FrameBlock gradient(const Operator& H, const FrameBlock& U) {
  check_dims(H, U);
  return FrameBlock(H.apply(U.matrix()));
}

Matrix grassmann_gradient(const Matrix& U, const Matrix& HU) {
  const Matrix R = symmetrize(U.transpose() * HU);
  return HU - U * R;
}

FrameBlock grassmann_gradient(const Operator& H, const FrameBlock& U) {
  check_dims(H, U);
  return FrameBlock(grassmann_gradient(U.matrix(), H.apply(U.matrix())));
}

FrameBlock extended_gradient(const Operator& H, const FrameBlock& U) {
  check_dims(H, U);
  const Matrix& X = U.matrix();
  const Matrix HU = H.apply(X);
  return FrameBlock(HU * symmetrize(X.transpose() * X) - X * symmetrize(X.transpose() * HU));
}

GramMatrix gram(const Matrix& U) { return {symmetrize(U.transpose() * U)}; }
GramMatrix gram(const FrameBlock& U) { return gram(U.matrix()); }

double ortho_defect(const Matrix& U) {
  const Matrix G = gram(U).value;
  return (Matrix::Identity(G.rows(), G.cols()) - G).norm();
}

double ortho_defect(const FrameBlock& U) { return ortho_defect(U.matrix()); }

RayleighBlock rayleigh_block(const Operator& H, const FrameBlock& U) {
  check_dims(H, U);
  return {symmetrize(U.matrix().transpose() * H.apply(U.matrix()))};
}

AdmissibilityReport admissible_initial(const Operator& H, const FrameBlock& U0,
                                       const AdmissibilityOptions& options) {
  AdmissibilityReport report;
  if (U0.width() == 0) {
    report.reason = "empty block";
    return report;
  }
  report.rayleigh_max_eig = symmetric_eigenvalues(rayleigh_block(H, U0).value).maxCoeff();
  report.gram_min_eig = symmetric_eigenvalues(gram(U0).value).minCoeff();

  const bool rank_ok = report.gram_min_eig > options.eps_rank;
  const bool sign_ok = options.allow_semidefinite
                           ? report.rayleigh_max_eig <= options.eps_adm
                           : report.rayleigh_max_eig < -options.eps_adm;
  report.ok = rank_ok && sign_ok;
  std::ostringstream reason;
  if (!rank_ok) {
    reason << "rank: lambda_min(U0^T U0) = " << report.gram_min_eig
           << " <= eps_rank = " << options.eps_rank;
  }
  if (!sign_ok) {
    if (!rank_ok) reason << "; ";
    reason << "sign: lambda_max(U0^T H U0) = " << report.rayleigh_max_eig
           << (options.allow_semidefinite ? " > " : " >= -") << options.eps_adm;
  }
  report.reason = reason.str();
  return report;
}

namespace {

Matrix orthonormalize(const Matrix& X) {
  Eigen::HouseholderQR<Matrix> qr(X);
  Matrix Q = qr.householderQ() * Matrix::Identity(X.rows(), X.cols());
  // Fix column signs so that the result depends only on span and R's diagonal.
  const Matrix R = qr.matrixQR().topRows(X.cols()).triangularView<Eigen::Upper>();
  for (Index j = 0; j < X.cols(); ++j) {
    if (R(j, j) < 0.0) Q.col(j) = -Q.col(j);
  }
  return Q;
}

double filter_bound(const Operator& H) {
  if (H.dense_representable() || H.supplied_upper_bound()) {
    return gershgorin_upper_bound(H);
  }
  return 1.1 * estimate_spectral_radius(H, 20, 0x5eed);
}

}  // namespace

FrameBlock random_admissible_initial(const Operator& H, Index width, std::uint64_t seed,
                                     InitMode mode, const InitOptions& options) {
  if (width < 1 || width > H.dim()) {
    throw Error(ErrorCode::invalid_argument, "block width must lie in [1, n]");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);

  Matrix X(H.dim(), width);
  for (Index j = 0; j < width; ++j)
    for (Index i = 0; i < H.dim(); ++i) X(i, j) = normal(rng);

  // Random rotation mixing the column scalings, so the Gram matrix is not
  // diagonal in the returned basis.
  Matrix W(width, width);
  for (Index j = 0; j < width; ++j)
    for (Index i = 0; i < width; ++i) W(i, j) = normal(rng);
  W = orthonormalize(W);

  Vector scales = Vector::Ones(width);
  for (Index j = 0; j < width; ++j) {
    const double u = uniform(rng);
    switch (mode) {
      case InitMode::sub_stiefel:
        scales(j) = std::sqrt(options.sub_gram_low + u * (options.sub_gram_high - options.sub_gram_low));
        break;
      case InitMode::super_stiefel:
        scales(j) = std::sqrt(options.super_gram_low + u * (options.super_gram_high - options.super_gram_low));
        break;
      case InitMode::stiefel:
        break;
    }
  }

  // Retries run subspace iteration with (bound - H) on a guarded block of p
  // columns and keep the N lowest Ritz vectors, which projects onto the
  // negative-eigenvalue-dominant subspace much faster than filtering N columns.
  const Index guarded = std::min(H.dim(), std::max(2 * width, width + 8));
  Matrix Z;
  double bound = 0.0;
  AdmissibilityReport last;
  for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
    if (attempt > 0) {
      if (Z.size() == 0) {
        bound = filter_bound(H);
        Z.resize(H.dim(), guarded);
        Z.leftCols(width) = X;
        for (Index j = width; j < guarded; ++j)
          for (Index i = 0; i < H.dim(); ++i) Z(i, j) = normal(rng);
      }
      Z = orthonormalize(bound * Z - H.apply(Z));
      const Matrix HZ = H.apply(Z);
      const Matrix S = 0.5 * (Z.transpose() * HZ + HZ.transpose() * Z);
      const Eigen::SelfAdjointEigenSolver<Matrix> ritz(S);
      X = Z * ritz.eigenvectors().leftCols(width);
    }
    X = orthonormalize(X);
    Matrix U = X;
    if (mode != InitMode::stiefel) U = X * W * scales.asDiagonal() * W.transpose();
    FrameBlock candidate(std::move(U));
    last = admissible_initial(H, candidate, options.admissibility);
    if (last.ok) return candidate;
  }
  std::ostringstream msg;
  msg << "no admissible initial block after " << options.max_retries
      << " filtered retries (" << last.reason << ")";
  throw Error(ErrorCode::admissibility_failure, msg.str());
}

}  // namespace grassflow
