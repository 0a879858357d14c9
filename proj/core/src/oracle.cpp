#include "grassflow/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>

#include "grassflow/error.hpp"

namespace grassflow {

namespace {

constexpr Index kMaxJacobiDim = 2048;
constexpr Index kMaxDenseFlowDim = 512;

// Frobenius norm of the strict upper triangle, times sqrt(2).
double off_diagonal_norm(const Matrix& A) {
  double sum = 0.0;
  for (Index j = 1; j < A.cols(); ++j)
    for (Index i = 0; i < j; ++i) sum += A(i, j) * A(i, j);
  return std::sqrt(2.0 * sum);
}

struct Rotation {
  double s;
  double tau;  // s / (1 + c)

  void apply(double& g, double& h) const {
    const double g0 = g;
    const double h0 = h;
    g = g0 - s * (h0 + g0 * tau);
    h = h0 + s * (g0 - h0 * tau);
  }
};

// Annihilates A(p, q) (upper triangle only). Diagonal changes go to d and z
// as increments t * a_pq instead of being recomputed from the rotated
// entries, which keeps the rounding in the eigenvalues at the level of the
// increments rather than of |a_pp|.
void rotate(Matrix& A, Vector& d, Vector& z, Matrix& V, Index p, Index q) {
  const double apq = A(p, q);
  const double theta = (d(q) - d(p)) / (2.0 * apq);
  double t;
  if (std::abs(theta) > 1e150) {
    t = 0.5 / theta;
  } else {
    t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(1.0 + theta * theta));
  }
  const double c = 1.0 / std::sqrt(1.0 + t * t);
  const Rotation rot{t * c, t * c / (1.0 + c)};
  const double h = t * apq;
  z(p) -= h;
  z(q) += h;
  d(p) -= h;
  d(q) += h;
  A(p, q) = 0.0;
  const Index n = A.rows();
  for (Index j = 0; j < p; ++j) rot.apply(A(j, p), A(j, q));
  for (Index j = p + 1; j < q; ++j) rot.apply(A(p, j), A(j, q));
  for (Index j = q + 1; j < n; ++j) rot.apply(A(p, j), A(q, j));
  for (Index j = 0; j < n; ++j) rot.apply(V(j, p), V(j, q));
}

void require_square(const Matrix& M, const char* who) {
  if (M.rows() != M.cols()) {
    std::ostringstream msg;
    msg << who << ": expected a square matrix, got " << M.rows() << "x" << M.cols();
    throw Error(ErrorCode::non_square, msg.str());
  }
}

}  // namespace

EigenDecomposition jacobi_eigensolver(const Matrix& M, const JacobiOptions& options) {
  require_square(M, "jacobi_eigensolver");
  const Index n = M.rows();
  if (n > kMaxJacobiDim) {
    throw Error(ErrorCode::invalid_argument, "jacobi_eigensolver is limited to n <= 2048");
  }
  if (n == 0) return {};
  const double scale = M.cwiseAbs().maxCoeff();
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw Error(ErrorCode::asymmetric_input, "jacobi_eigensolver: input is not symmetric");
  }

  Matrix A = 0.5 * (M + M.transpose());
  Matrix V = Matrix::Identity(n, n);
  Vector d = A.diagonal();
  Vector b = d;
  Vector z = Vector::Zero(n);
  const double threshold = options.tolerance * A.norm();

  bool converged = off_diagonal_norm(A) <= threshold;
  for (int sweep = 0; sweep < options.max_sweeps && !converged; ++sweep) {
    for (Index p = 0; p + 1 < n; ++p)
      for (Index q = p + 1; q < n; ++q)
        if (A(p, q) != 0.0) rotate(A, d, z, V, p, q);
    b += z;
    d = b;
    z.setZero();
    converged = off_diagonal_norm(A) <= threshold;
  }
  if (!converged) {
    std::ostringstream msg;
    msg << "jacobi_eigensolver: no convergence after " << options.max_sweeps << " sweeps";
    throw Error(ErrorCode::no_convergence, msg.str());
  }

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&d](Index i, Index j) { return d(i) < d(j); });
  EigenDecomposition result{Vector(n), Matrix(n, n)};
  for (Index k = 0; k < n; ++k) {
    const Index src = order[static_cast<std::size_t>(k)];
    result.eigenvalues(k) = d(src);
    result.eigenvectors.col(k) = V.col(src);
  }
  return result;
}

Matrix expm_sym(const Matrix& M, double scale) {
  require_square(M, "expm_sym");
  if (M.rows() > kMaxDenseFlowDim) {
    throw Error(ErrorCode::invalid_argument, "expm_sym is limited to n <= 512");
  }
  const EigenDecomposition eig = jacobi_eigensolver(M);
  const Vector e = (scale * eig.eigenvalues).array().exp();
  return eig.eigenvectors * e.asDiagonal() * eig.eigenvectors.transpose();
}

Matrix inv_sqrt_spd(const Matrix& M) {
  require_square(M, "inv_sqrt_spd");
  const EigenDecomposition eig = jacobi_eigensolver(M);
  if (eig.eigenvalues.size() > 0 && eig.eigenvalues(0) < 1e-12) {
    std::ostringstream msg;
    msg << "inv_sqrt_spd: minimum eigenvalue " << eig.eigenvalues(0) << " < 1e-12";
    throw Error(ErrorCode::singular_matrix, msg.str());
  }
  const Vector d = eig.eigenvalues.array().rsqrt();
  return eig.eigenvectors * d.asDiagonal() * eig.eigenvectors.transpose();
}

namespace {

/// Core of the closed form in eigen-coordinates of H: `coeffs` = Q^T U0,
/// `gram0` = U0^T U0.
// U(t) = V e^{-Lt} C (I - G + C^T e^{-2Lt} C)^{-1/2}. With P the leading rows of C,
// write e^{-Lt} C = Y M where Y has identity rows at P and M = e^{-L_P t} C_P. Then
// U = V Y E^{-1/2} O with E = Y^T Y + e^{L_P t} C_P^{-T} (I - G) C_P^{-1} e^{L_P t}
// and O the orthogonal polar factor of E^{1/2} M. Y and E stay well conditioned for
// all t; the e^{-(lambda_i - lambda_j) t} grading only enters through O.
Matrix closed_form(const EigenDecomposition& eig, const Matrix& coeffs, const Matrix& gram0,
                   double t) {
  if (!(t >= 0.0)) throw Error(ErrorCode::invalid_argument, "flow time must be >= 0");
  const Index n = coeffs.rows();
  const Index width = coeffs.cols();
  const std::vector<Index> rows = leading_rows(coeffs);
  if (static_cast<Index>(rows.size()) < width) {
    throw Error(ErrorCode::singular_matrix, "initial block is rank deficient");
  }
  const Vector& lambda = eig.eigenvalues;

  Matrix C_P(width, width);
  Vector lambda_P(width);
  for (Index j = 0; j < width; ++j) {
    C_P.row(j) = coeffs.row(rows[j]);
    lambda_P(j) = lambda(rows[j]);
  }
  const Eigen::PartialPivLU<Matrix> lu(C_P);
  const Matrix K = lu.solve(Matrix::Identity(width, width));  // C_P^{-1}

  Matrix Y = coeffs * K;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < width; ++j) Y(i, j) *= std::exp(-(lambda(i) - lambda_P(j)) * t);
  }
  for (Index j = 0; j < width; ++j) {
    Y.row(rows[j]).setZero();
    Y(rows[j], j) = 1.0;
  }

  const Vector d = (lambda_P * t).array().exp();
  const Matrix scaled_inv = K * d.asDiagonal();
  Matrix E = Y.transpose() * Y +
             scaled_inv.transpose() * (Matrix::Identity(width, width) - gram0) * scaled_inv;
  E = 0.5 * (E + E.transpose());
  if (!E.allFinite() || !Y.allFinite()) {
    throw Error(ErrorCode::singular_matrix, "closed-form bracket overflowed (inadmissible U0?)");
  }

  const EigenDecomposition eeig = jacobi_eigensolver(E);
  const double top = eeig.eigenvalues(width - 1);
  if (!(top > 0.0) || eeig.eigenvalues(0) <= 1e-12 * top) {
    std::ostringstream msg;
    msg << "closed-form bracket is not SPD: eigenvalues in [" << eeig.eigenvalues(0) << ", " << top
        << "]";
    throw Error(ErrorCode::singular_matrix, msg.str());
  }
  const Vector root_d = eeig.eigenvalues.array().sqrt();
  const Matrix E_half = eeig.eigenvectors * root_d.asDiagonal() * eeig.eigenvectors.transpose();
  const Matrix E_inv_half =
      eeig.eigenvectors * root_d.cwiseInverse().asDiagonal() * eeig.eigenvectors.transpose();

  Matrix M = C_P;
  for (Index j = 0; j < width; ++j) M.row(j) *= std::exp(-(lambda_P(j) - lambda(0)) * t);
  const Eigen::JacobiSVD<Matrix> svd(E_half * M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix O = svd.matrixU() * svd.matrixV().transpose();

  return eig.eigenvectors * (Y * (E_inv_half * O));
}

}  // namespace

AnalyticFlow::AnalyticFlow(const Matrix& H, const FrameBlock& U0) {
  require_square(H, "AnalyticFlow");
  if (H.rows() > kMaxDenseFlowDim) {
    throw Error(ErrorCode::invalid_argument, "closed-form flow is limited to n <= 512");
  }
  if (H.rows() != U0.ambient_dim()) {
    throw Error(ErrorCode::dimension_mismatch, "operator and initial block dimensions differ");
  }
  eig_ = jacobi_eigensolver(H);
  coeffs_ = eig_.eigenvectors.transpose() * U0.matrix();
  gram0_ = gram(U0).value;
}

FrameBlock AnalyticFlow::at(double t) const {
  return FrameBlock(closed_form(eig_, coeffs_, gram0_, t));
}

std::vector<Index> leading_rows(const Matrix& C) {
  const Index width = C.cols();
  const double tol = 1e-10 * std::max(C.norm(), 1e-300);
  std::vector<Index> rows;
  Matrix basis(width, 0);
  for (Index i = 0; i < C.rows() && static_cast<Index>(rows.size()) < width; ++i) {
    Vector r = C.row(i).transpose();
    for (int pass = 0; pass < 2; ++pass) r -= basis * (basis.transpose() * r);
    const double norm = r.norm();
    if (norm <= tol) continue;
    rows.push_back(i);
    basis.conservativeResize(Eigen::NoChange, basis.cols() + 1);
    basis.col(basis.cols() - 1) = r / norm;
  }
  return rows;
}

FrameBlock analytic_flow_solution(const Matrix& H, const FrameBlock& U0, double t) {
  return AnalyticFlow(H, U0).at(t);
}

FrameBlock galerkin_flow_solution(const Matrix& H, Index basis_size, const FrameBlock& U0,
                                  double t) {
  require_square(H, "galerkin_flow_solution");
  if (H.rows() != U0.ambient_dim()) {
    throw Error(ErrorCode::dimension_mismatch, "operator and initial block dimensions differ");
  }
  if (basis_size < 1 || basis_size > H.rows()) {
    throw Error(ErrorCode::invalid_argument, "basis size must lie in [1, n]");
  }
  const EigenDecomposition full = jacobi_eigensolver(H);
  const Matrix P = full.eigenvectors.leftCols(basis_size);
  const Matrix alpha0 = P.transpose() * U0.matrix();
  const Matrix Hm = P.transpose() * H * P;
  const EigenDecomposition local = jacobi_eigensolver(0.5 * (Hm + Hm.transpose()));
  const Matrix coeffs = local.eigenvectors.transpose() * alpha0;
  const Matrix alpha_t = closed_form(local, coeffs, gram(alpha0).value, t);
  return FrameBlock(P * alpha_t);
}

SmallSvd svd_small(const Matrix& M) {
  const Index p = M.rows();
  const Index q = M.cols();
  if (std::max(p, q) > kMaxJacobiDim || std::min(p, q) > 64) {
    throw Error(ErrorCode::invalid_argument, "svd_small needs max(p,q) <= 2048 and min(p,q) <= 64");
  }
  if (p < q) {
    SmallSvd t = svd_small(M.transpose());
    return {std::move(t.V), std::move(t.singular_values), std::move(t.U)};
  }
  const EigenDecomposition eig = jacobi_eigensolver(M.transpose() * M);
  const Index k = q;
  // Column norms of M v_i are more accurate than sqrt of the eigenvalues of
  // M^T M for the small singular values.
  Matrix MV = M * eig.eigenvectors;
  Vector sigma(k);
  for (Index i = 0; i < k; ++i) sigma(i) = MV.col(i).norm();

  std::vector<Index> order(static_cast<std::size_t>(k));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&sigma](Index a, Index b) { return sigma(a) > sigma(b); });

  SmallSvd out{Matrix::Zero(p, k), Vector(k), Matrix(q, k)};
  const double cutoff = 1e-14 * (k > 0 ? sigma.maxCoeff() : 0.0);
  std::vector<Index> deficient;
  for (Index j = 0; j < k; ++j) {
    const Index src = order[static_cast<std::size_t>(j)];
    out.singular_values(j) = sigma(src);
    out.V.col(j) = eig.eigenvectors.col(src);
    if (sigma(src) > cutoff && sigma(src) > 0.0) {
      out.U.col(j) = MV.col(src) / sigma(src);
    } else {
      deficient.push_back(j);
    }
  }
  // Complete U with orthonormal directions for (numerically) zero singular values.
  Index candidate = 0;
  for (Index j : deficient) {
    while (candidate < p) {
      Vector v = Vector::Unit(p, candidate++);
      for (int pass = 0; pass < 2; ++pass) {
        for (Index c = 0; c < k; ++c) {
          if (out.U.col(c).squaredNorm() > 0.0) v -= out.U.col(c).dot(v) * out.U.col(c);
        }
      }
      if (v.norm() > 1e-8) {
        out.U.col(j) = v.normalized();
        break;
      }
    }
  }
  return out;
}

}  // namespace grassflow
