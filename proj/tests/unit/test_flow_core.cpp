#include <gtest/gtest.h>

#include "grassflow/error.hpp"
#include "grassflow/flow_core.hpp"
#include "grassflow/oracle.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace grassflow;
using grassflow::testkit::SplitMix64;

namespace {

Operator diag_op(std::initializer_list<double> values) {
  Vector d(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) d(i++) = v;
  return build_dense(d.asDiagonal().toDenseMatrix());
}

// Lowest N eigenvectors from the Jacobi oracle.
Matrix low_eigvecs(const Operator& H, Index N) {
  return jacobi_eigensolver(H.to_dense()).eigenvectors.leftCols(N);
}

}  // namespace

TEST(FrameBlock, Invariants) {
  EXPECT_THROW(FrameBlock(Matrix::Zero(2, 3)), Error);
  Matrix bad = Matrix::Zero(3, 1);
  bad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    FrameBlock{bad};
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_finite_state);
  }
  const FrameBlock Z = FrameBlock::zeros(5, 2);
  EXPECT_EQ(Z.ambient_dim(), 5);
  EXPECT_EQ(Z.width(), 2);
}

TEST(Energy, Examples) {
  const Operator H = diag_op({-2, -1, 3});
  EXPECT_DOUBLE_EQ(energy(H, FrameBlock(Matrix(Vector::Unit(3, 0)))), -1.0);
  EXPECT_EQ(energy(H, FrameBlock::zeros(3, 2)), 0.0);
  EXPECT_THROW(energy(H, FrameBlock::zeros(4, 1)), Error);
}

TEST(Energy, OrthogonalInvariance) {
  SplitMix64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const Index n = 4 + static_cast<Index>(rng.next() % 12);
    const Index N = 1 + static_cast<Index>(rng.next() % 4);
    const Operator H = build_dense(testkit::random_symmetric(rng, n));
    const Matrix U = testkit::gaussian(rng, n, N);
    const Matrix Q = testkit::random_orthogonal(rng, N);
    const double e = energy(H, FrameBlock(U));
    EXPECT_LE(std::abs(energy(H, FrameBlock(Matrix(U * Q))) - e), 1e-12 * (1 + std::abs(e)));
  }
}

TEST(Energy, MatchesTraceFormula) {
  SplitMix64 rng(11);
  const Matrix A = testkit::random_symmetric(rng, 6);
  const Matrix U = testkit::gaussian(rng, 6, 2);
  EXPECT_NEAR(energy(build_dense(A), FrameBlock(U)), 0.5 * (U.transpose() * A * U).trace(), 1e-12);
}

TEST(Gradient, Examples) {
  SplitMix64 rng(12);
  const Matrix U = testkit::gaussian(rng, 4, 2);
  EXPECT_EQ(gradient(build_dense(Matrix::Identity(4, 4)), FrameBlock(U)).matrix(), U);
  EXPECT_EQ(gradient(build_dense(Matrix::Zero(4, 4)), FrameBlock(U)).matrix().norm(), 0.0);
}

TEST(Gradient, CentralDifference) {
  SplitMix64 rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    const Operator H = build_dense(testkit::random_symmetric(rng, 7));
    const Matrix U = testkit::gaussian(rng, 7, 3);
    const Matrix V = testkit::gaussian(rng, 7, 3);
    const double step = 1e-5;
    const double fd = (energy(H, FrameBlock(Matrix(U + step * V))) -
                       energy(H, FrameBlock(Matrix(U - step * V)))) /
                      (2 * step);
    const double exact = frobenius_inner(gradient(H, FrameBlock(U)).matrix(), V);
    EXPECT_NEAR(fd, exact, 1e-6 * std::max(1.0, std::abs(exact)));
  }
}

TEST(GrassmannGradient, VanishesOnEigenbasis) {
  const Operator H = shift_operator(build_laplacian_1d(16, 1.0), 1200.0);
  const Matrix V = low_eigvecs(H, 3);
  EXPECT_LE(grassmann_gradient(H, FrameBlock(V)).matrix().norm(), 1e-10 * std::max(1.0, H.apply(V).norm()));
}

TEST(GrassmannGradient, TrivialCases) {
  SplitMix64 rng(14);
  const Matrix U = testkit::random_orthonormal(rng, 5, 2);
  const Operator cI = build_dense(3.5 * Matrix::Identity(5, 5));
  EXPECT_LE(grassmann_gradient(cI, FrameBlock(U)).matrix().norm(), 1e-14);
  EXPECT_EQ(grassmann_gradient(cI, FrameBlock::zeros(5, 2)).matrix().norm(), 0.0);
}

TEST(GrassmannGradient, OrthogonalToOrthonormalBlock) {
  SplitMix64 rng(15);
  const Operator H = build_dense(testkit::random_symmetric(rng, 9));
  const Matrix U = testkit::random_orthonormal(rng, 9, 3);
  const Matrix g = grassmann_gradient(H, FrameBlock(U)).matrix();
  EXPECT_LE((g.transpose() * U).norm(), 1e-13);
}

TEST(GrassmannGradient, Equivariance) {
  SplitMix64 rng(16);
  for (int trial = 0; trial < 30; ++trial) {
    const Index n = 5 + static_cast<Index>(rng.next() % 10);
    const Index N = 1 + static_cast<Index>(rng.next() % 4);
    const Operator H = build_dense(testkit::random_symmetric(rng, n));
    const Matrix U = testkit::gaussian(rng, n, N);
    const Matrix Q = testkit::random_orthogonal(rng, N);
    const Matrix lhs = grassmann_gradient(H, FrameBlock(Matrix(U * Q))).matrix();
    const Matrix rhs = grassmann_gradient(H, FrameBlock(U)).matrix() * Q;
    EXPECT_LE((lhs - rhs).norm(), 1e-12 * std::max(1.0, rhs.norm()));
  }
}

// Stationary iff the span is invariant, on dense instances up to n = 32.
TEST(GrassmannGradient, StationarityCharacterizesInvariantSubspaces) {
  SplitMix64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 4 + static_cast<Index>(rng.next() % 29);
    const Index N = 1 + static_cast<Index>(rng.next() % 3);
    const Matrix A = testkit::random_symmetric(rng, n);
    const Operator H = build_dense(A);
    const EigenDecomposition eig = jacobi_eigensolver(A);

    // Any N eigenvectors (not only the lowest) span an invariant subspace.
    Matrix V(n, N);
    for (Index j = 0; j < N; ++j) V.col(j) = eig.eigenvectors.col((j + trial) % n);
    const Matrix Q = testkit::random_orthogonal(rng, N);
    const Matrix VQ = V * Q;
    EXPECT_LE(grassmann_gradient(H, FrameBlock(VQ)).matrix().norm(),
              1e-10 * std::max(1.0, H.apply(VQ).norm()));

    const Matrix U = testkit::random_orthonormal(rng, n, N);
    EXPECT_GT(grassmann_gradient(H, FrameBlock(U)).matrix().norm(), 1e-10 * H.apply(U).norm());
  }
}

TEST(ExtendedGradient, AgreesOnStiefel) {
  SplitMix64 rng(18);
  const Operator H = build_dense(testkit::random_symmetric(rng, 8));
  const Matrix U = testkit::random_orthonormal(rng, 8, 3);
  EXPECT_LE((extended_gradient(H, FrameBlock(U)).matrix() - grassmann_gradient(H, FrameBlock(U)).matrix()).norm(),
            1e-13);
}

TEST(Gram, Examples) {
  SplitMix64 rng(19);
  const Matrix U = testkit::random_orthonormal(rng, 7, 3);
  EXPECT_LE((gram(U).value - Matrix::Identity(3, 3)).norm(), 1e-14);

  Matrix dup = testkit::gaussian(rng, 6, 3);
  dup.col(2) = dup.col(0);
  EXPECT_LE(symmetric_eigenvalues(gram(dup).value)(0), 1e-12);

  const Matrix G = gram(testkit::gaussian(rng, 5, 5)).value;
  EXPECT_EQ((G - G.transpose()).norm(), 0.0);
}

TEST(Gram, EigenvaluesAreSquaredSingularValues) {
  SplitMix64 rng(20);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix U = testkit::gaussian(rng, 10, 4);
    const Vector sigma = svd_small(U).singular_values;
    const Vector g = jacobi_eigensolver(gram(U).value).eigenvalues;
    for (Index i = 0; i < 4; ++i) EXPECT_NEAR(g(i), sigma(3 - i) * sigma(3 - i), 1e-10 * (1 + g(3)));
  }
}

TEST(OrthoDefect, Examples) {
  SplitMix64 rng(21);
  EXPECT_LE(ortho_defect(testkit::random_orthonormal(rng, 6, 3)), 1e-14);
  EXPECT_DOUBLE_EQ(ortho_defect(Matrix::Zero(4, 3)), std::sqrt(3.0));
  Matrix U = Matrix::Zero(3, 2);
  U(0, 0) = std::sqrt(0.5);
  U(1, 1) = std::sqrt(0.5);
  EXPECT_NEAR(ortho_defect(U), 0.5 * std::sqrt(2.0), 1e-15);
}

TEST(OrthoDefect, ZeroIffStiefel) {
  SplitMix64 rng(22);
  for (int trial = 0; trial < 30; ++trial) {
    const Matrix Q = testkit::random_orthonormal(rng, 8, 3);
    EXPECT_LE(ortho_defect(Q), 1e-12);
    EXPECT_LE((gram(Q).value - Matrix::Identity(3, 3)).norm(), 1e-12);

    const Matrix U = testkit::scaled_block(rng, Q, 0.5, 0.99);
    EXPECT_GT(ortho_defect(U), 1e-12);
    EXPECT_GT((gram(U).value - Matrix::Identity(3, 3)).norm(), 1e-12);
  }
}

TEST(RayleighBlock, Examples) {
  const Operator H = shift_operator(build_laplacian_1d(12, 1.0), 700.0);
  const EigenDecomposition eig = jacobi_eigensolver(H.to_dense());
  const Matrix R = rayleigh_block(H, FrameBlock(Matrix(eig.eigenvectors.leftCols(3)))).value;
  const Vector ritz = jacobi_eigensolver(R).eigenvalues;
  for (Index i = 0; i < 3; ++i)
    EXPECT_NEAR(ritz(i), eig.eigenvalues(i), 1e-10 * std::abs(eig.eigenvalues(0)));

  SplitMix64 rng(23);
  EXPECT_EQ(rayleigh_block(build_dense(Matrix::Zero(4, 4)), FrameBlock(testkit::gaussian(rng, 4, 2))).value.norm(),
            0.0);
  const Operator D = diag_op({-2, -1, 3});
  EXPECT_DOUBLE_EQ(rayleigh_block(D, FrameBlock(Matrix(Vector::Unit(3, 2)))).value(0, 0), 3.0);
}

TEST(FrobeniusInner, CompensatedSum) {
  Matrix A(1, 3);
  A << 1e16, 1.0, -1e16;
  const Matrix B = Matrix::Ones(1, 3);
  EXPECT_EQ(frobenius_inner(A, B), 1.0);
  EXPECT_THROW(frobenius_inner(A, Matrix::Ones(3, 1)), Error);
}

TEST(Admissibility, Examples) {
  const Operator H = shift_operator(build_laplacian_1d(10, 1.0), 500.0);
  const Matrix V = low_eigvecs(H, 2);
  EXPECT_TRUE(admissible_initial(H, FrameBlock(V)).ok);

  SplitMix64 rng(24);
  const Operator P = build_dense(testkit::random_with_range(rng, 6, 0.5, 2.0));
  const AdmissibilityReport r = admissible_initial(P, FrameBlock(testkit::gaussian(rng, 6, 2)));
  EXPECT_FALSE(r.ok);
  EXPECT_GT(r.rayleigh_max_eig, 0.0);

  Matrix W = V;
  W.col(1).setZero();
  const AdmissibilityReport z = admissible_initial(H, FrameBlock(W));
  EXPECT_FALSE(z.ok);
  EXPECT_LE(z.gram_min_eig, 1e-10);
}

TEST(Admissibility, SemidefiniteFlag) {
  Vector d(3);
  d << -1, 0, 0;
  const Operator H = build_dense(d.asDiagonal().toDenseMatrix());
  const FrameBlock U(Matrix(Matrix::Identity(3, 2)));
  EXPECT_FALSE(admissible_initial(H, U).ok);
  AdmissibilityOptions weak;
  weak.allow_semidefinite = true;
  EXPECT_TRUE(admissible_initial(H, U, weak).ok);
}

TEST(RandomInitial, Modes) {
  const Operator H = shift_operator(build_laplacian_1d(32, 1.0), default_shift(build_laplacian_1d(32, 1.0)));
  const FrameBlock S = random_admissible_initial(H, 4, 7, InitMode::stiefel);
  EXPECT_LE(ortho_defect(S), 1e-12);

  const FrameBlock a = random_admissible_initial(H, 4, 99, InitMode::sub_stiefel);
  const FrameBlock b = random_admissible_initial(H, 4, 99, InitMode::sub_stiefel);
  EXPECT_EQ(a.matrix(), b.matrix());
  const Vector g = jacobi_eigensolver(gram(a).value).eigenvalues;
  EXPECT_GT(g.minCoeff(), 0.0);
  EXPECT_LE(g.maxCoeff(), 1.0 + 1e-12);
  EXPECT_TRUE(admissible_initial(H, a).ok);

  const FrameBlock sup = random_admissible_initial(H, 4, 99, InitMode::super_stiefel);
  const Vector gs = jacobi_eigensolver(gram(sup).value).eigenvalues;
  EXPECT_GE(gs.minCoeff(), 1.0 - 1e-12);
  EXPECT_LE(gs.maxCoeff(), 4.0 + 1e-12);
}

TEST(RandomInitial, SeedsDiffer) {
  const Operator H = shift_operator(build_laplacian_1d(16, 1.0), 1200.0);
  EXPECT_NE(random_admissible_initial(H, 2, 1, InitMode::stiefel).matrix(),
            random_admissible_initial(H, 2, 2, InitMode::stiefel).matrix());
}

TEST(RandomInitial, FailsWithoutNegativeSpectrum) {
  const Operator H = build_dense(Matrix::Identity(5, 5));
  try {
    random_admissible_initial(H, 2, 1, InitMode::sub_stiefel);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::admissibility_failure);
  }
}

TEST(RandomInitial, FewNegativeEigenvaluesStillFound) {
  // Only the two lowest eigenvalues are negative: random blocks usually fail
  // the gate and the filtered retries must find the negative subspace.
  Vector d(20);
  for (Index i = 0; i < 20; ++i) d(i) = static_cast<double>(i) - 1.5;
  SplitMix64 rng(25);
  const Operator H = build_dense(testkit::with_spectrum(rng, d));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FrameBlock U = random_admissible_initial(H, 2, seed, InitMode::sub_stiefel);
    EXPECT_TRUE(admissible_initial(H, U).ok);
  }
}
