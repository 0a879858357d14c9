#include <numbers>

#include <gtest/gtest.h>

#include "grassflow/diagnostics.hpp"
#include "grassflow/error.hpp"
#include "grassflow/oracle.hpp"
#include "support/generators.hpp"
#include "support/oracles.hpp"

using namespace grassflow;
using grassflow::testkit::SplitMix64;

namespace {

Matrix six_by_six() {
  Vector d(6);
  d << -3, -2, -1, 1, 2, 3;
  return d.asDiagonal();
}

// Samples of the closed-form trajectory on a uniform grid.
std::vector<DiagnosticsRecord> analytic_samples(const Matrix& H, const Matrix& U0, double t_end, int count,
                                                std::vector<Matrix>* frames = nullptr) {
  const AnalyticFlow flow(H, FrameBlock(U0));
  std::vector<DiagnosticsRecord> out;
  for (int k = 0; k < count; ++k) {
    const double t = t_end * k / (count - 1);
    const Matrix U = flow.at(t).matrix();
    out.push_back(make_record(U, H * U, t, k == 0 ? 0.0 : t_end / (count - 1)));
    if (frames) frames->push_back(U);
  }
  return out;
}

Matrix sub_stiefel_start(SplitMix64& rng, const Matrix& H, Index N) {
  return testkit::scaled_block(rng, testkit::negative_frame(rng, H, N), 0.6, 0.9);
}

Operator shifted_laplacian(Index m) {
  const Operator L = build_laplacian_1d(m, 1.0);
  return shift_operator(L, default_shift(L));
}

}  // namespace

TEST(FitExponentialDecay, ExactExponential) {
  std::vector<double> t;
  std::vector<double> v;
  for (int k = 0; k < 10; ++k) {
    t.push_back(0.3 * k);
    v.push_back(std::exp(-3.0 * t.back()));
  }
  const DecayFit fit = fit_exponential_decay(t, v);
  EXPECT_NEAR(fit.rate, 3.0, 1e-9);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
  EXPECT_NEAR(fit.prefactor(), 1.0, 1e-9);
  EXPECT_EQ(fit.samples, 10u);
}

TEST(FitExponentialDecay, ConstantValue) {
  const std::vector<double> t{0, 1, 2, 3, 4, 5};
  const std::vector<double> v(6, 0.25);
  const DecayFit fit = fit_exponential_decay(t, v);
  EXPECT_EQ(fit.rate, 0.0);
  EXPECT_GE(fit.r_squared, 0.0);
  EXPECT_LE(fit.r_squared, 1.0);
}

TEST(FitExponentialDecay, NoisyExponential) {
  SplitMix64 rng(70);
  std::vector<double> t;
  std::vector<double> v;
  for (int k = 0; k < 50; ++k) {
    t.push_back(0.1 * k);
    v.push_back(std::exp(-2.0 * t.back()) * (1.0 + 0.01 * rng.normal()));
  }
  const DecayFit fit = fit_exponential_decay(t, v);
  EXPECT_GE(fit.rate, 1.9);
  EXPECT_LE(fit.rate, 2.1);
  EXPECT_GE(fit.r_squared, 0.99);
}

TEST(FitExponentialDecay, WindowAndErrors) {
  std::vector<double> t;
  std::vector<double> v;
  for (int k = 0; k < 20; ++k) {
    t.push_back(k);
    v.push_back(k < 10 ? std::exp(-5.0 * k) : std::exp(-50.0) * std::exp(-1.0 * (k - 10)));
  }
  const DecayFit late = fit_exponential_decay(t, v, FitWindow{10, 19});
  EXPECT_NEAR(late.rate, 1.0, 1e-9);
  EXPECT_EQ(late.samples, 10u);

  try {
    fit_exponential_decay(t, v, FitWindow{0, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_samples);
  }
  std::vector<double> bad = v;
  bad[3] = 0.0;
  try {
    fit_exponential_decay(t, bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_positive_value);
  }
}

TEST(SubspaceDistance, Examples) {
  SplitMix64 rng(71);
  const Matrix U = testkit::gaussian(rng, 7, 3);
  EXPECT_LE(subspace_distance(U, Matrix(U * testkit::random_orthogonal(rng, 3))), 1e-12);
  EXPECT_LE(subspace_distance(U, U), 1e-12);

  const double theta = std::numbers::pi / 3;
  Matrix a(2, 1);
  Matrix b(2, 1);
  a << 1, 0;
  b << std::cos(theta), std::sin(theta);
  EXPECT_NEAR(subspace_distance(a, b), 1.0, 1e-14);
  // Sign flip is an orthogonal Q for N = 1.
  EXPECT_NEAR(subspace_distance(a, Matrix(-b)), 1.0, 1e-14);

  EXPECT_THROW(subspace_distance(Matrix::Zero(3, 2), Matrix::Zero(3, 1)), Error);
}

TEST(SubspaceDistance, Pseudometric) {
  SplitMix64 rng(72);
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = 3 + static_cast<Index>(rng.next() % 10);
    const Index N = 1 + static_cast<Index>(rng.next() % 3);
    const Matrix A = testkit::gaussian(rng, n, N);
    const Matrix B = testkit::gaussian(rng, n, N);
    const Matrix C = testkit::gaussian(rng, n, N);
    const double ab = subspace_distance(A, B);
    EXPECT_NEAR(ab, subspace_distance(B, A), 1e-12 * (1 + ab));
    EXPECT_LE(ab, subspace_distance(A, C) + subspace_distance(C, B) + 1e-10);
    EXPECT_NEAR(ab, testkit::reference_distance(A, B), 1e-10 * (1 + ab));
    EXPECT_GE(ab, 0.0);
    const Matrix Q = testkit::random_orthogonal(rng, N);
    EXPECT_LE(subspace_distance(A, Matrix(A * Q)), 1e-12 * (1 + A.norm()));
  }
}

TEST(ProjectorResiduals, Examples) {
  const Matrix H = shifted_laplacian(20).to_dense();
  const Matrix V = jacobi_eigensolver(H).eigenvectors.leftCols(4);
  const ProjectorResiduals eig = projector_residuals(H, V);
  EXPECT_LE(eig.r_eq, 1e-10);
  EXPECT_LE(eig.r_idem, 1e-10);

  const ProjectorResiduals zero = projector_residuals(H, Matrix::Zero(20, 4));
  EXPECT_EQ(zero.r_eq, 0.0);
  EXPECT_EQ(zero.r_idem, 0.0);

  SplitMix64 rng(73);
  EXPECT_GT(projector_residuals(H, testkit::random_orthonormal(rng, 20, 4)).r_eq, 1e-3);
}

TEST(ProjectorResiduals, DecayAlongClosedForm) {
  SplitMix64 rng(74);
  const Matrix H = six_by_six();
  const Matrix U0 = sub_stiefel_start(rng, H, 2);
  const AnalyticFlow flow(H, FrameBlock(U0));
  std::vector<double> t;
  std::vector<double> r;
  for (int k = 1; k <= 30; ++k) {
    t.push_back(0.5 * k);
    r.push_back(projector_residuals(H, flow.at(t.back()).matrix()).r_eq);
  }
  const DecayFit fit = fit_exponential_decay(t, r);
  EXPECT_GT(fit.rate, 0.0);
  EXPECT_GE(fit.r_squared, 0.9);
}

TEST(DefectBound, OrthonormalStartTrivial) {
  SplitMix64 rng(75);
  const Matrix H = six_by_six();
  const Matrix U0 = testkit::orthonormalize(Matrix::Identity(6, 2) + 0.3 * testkit::gaussian(rng, 6, 2));
  const auto samples = analytic_samples(H, U0, 5.0, 40);
  const DefectBoundVerdict v = check_defect_bound(samples, 6);
  EXPECT_TRUE(v.pass);
  EXPECT_LE(v.defect0, 1e-14);
}

TEST(DefectBound, ClosedFormPassesWithRateRatioAboveOne) {
  SplitMix64 rng(76);
  const Matrix H = six_by_six();
  const Matrix U0 = testkit::scaled_block(
      rng, testkit::orthonormalize(Matrix::Identity(6, 2) + 0.3 * testkit::gaussian(rng, 6, 2)), 0.6, 0.9);
  const auto samples = analytic_samples(H, U0, 6.0, 60);
  const DefectBoundVerdict v = check_defect_bound(samples, 6);
  EXPECT_TRUE(v.pass) << v.note;
  EXPECT_TRUE(v.monotone);
  EXPECT_EQ(v.violations, 0u);
  EXPECT_GE(v.rate_ratio, 1.0);
}

TEST(DefectBound, GrowingDefectFails) {
  std::vector<DiagnosticsRecord> samples;
  for (int k = 0; k < 10; ++k) {
    DiagnosticsRecord r;
    r.t = 0.1 * k;
    r.defect = 0.1 * (1 + k);
    r.c0_emp = 1.0;
    r.gram_eigs = Vector::Constant(2, 0.9);
    r.ritz_values = Vector::Constant(2, -1.0);
    samples.push_back(r);
  }
  const DefectBoundVerdict v = check_defect_bound(samples, 6);
  EXPECT_FALSE(v.pass);
  EXPECT_FALSE(v.monotone);
  EXPECT_GT(v.violations, 0u);
}

TEST(EmpiricalConstants, StationaryTrajectory) {
  const Operator H = shifted_laplacian(12);
  const Matrix V = jacobi_eigensolver(H.to_dense()).eigenvectors.leftCols(2);
  std::vector<DiagnosticsRecord> samples;
  for (int k = 0; k < 12; ++k) samples.push_back(make_record(V, H.apply(V), 0.1 * k, 0.1));
  const EmpiricalConstants c = empirical_constants(samples);
  EXPECT_TRUE(c.already_converged);
  EXPECT_TRUE(std::isnan(c.gamma));
  EXPECT_TRUE(std::isnan(c.K));
  EXPECT_GT(c.c0, 0.0);
}

TEST(EmpiricalConstants, ClosedFormFit) {
  SplitMix64 rng(77);
  const Matrix H = six_by_six();
  const Matrix U0 = sub_stiefel_start(rng, H, 2);
  ASSERT_TRUE(admissible_initial(build_dense(H), FrameBlock(U0)).ok);
  const auto samples = analytic_samples(H, U0, 10.0, 80);
  const EmpiricalConstants c = empirical_constants(samples);
  EXPECT_FALSE(c.already_converged);
  EXPECT_GT(c.gamma, 0.0);
  EXPECT_GT(c.K, 0.0);
  EXPECT_GE(c.r_squared, 0.95);
  // The late gradient rate is the spectral gap lambda_3 - lambda_2 = 1.
  EXPECT_NEAR(c.gamma, 1.0, 0.05);
}

TEST(EmpiricalConstants, C0FromInitialSampleWhenMinimal) {
  SplitMix64 rng(78);
  const Matrix H = six_by_six();
  const Matrix U0 = sub_stiefel_start(rng, H, 2);
  const auto samples = analytic_samples(H, U0, 5.0, 20);
  double min_c0 = samples.front().c0_emp;
  for (const auto& r : samples) min_c0 = std::min(min_c0, r.c0_emp);
  const double at0 = -symmetric_eigenvalues(U0.transpose() * H * U0).maxCoeff();
  const EmpiricalConstants c = empirical_constants(samples);
  EXPECT_EQ(c.c0, min_c0);
  if (min_c0 == samples.front().c0_emp) EXPECT_NEAR(c.c0, at0, 1e-14);
}

TEST(EmpiricalConstants, TooFewSamples) {
  std::vector<DiagnosticsRecord> samples(9);
  try {
    empirical_constants(samples);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::insufficient_samples);
  }
}

TEST(GramCorridor, ClosedFormLimit) {
  SplitMix64 rng(79);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix H = testkit::with_spectrum(rng, (Vector(6) << -3, -2, -1, 1, 2, 3).finished());
    const Matrix V = testkit::reference_eig(H).vectors.leftCols(2);
    const Matrix U0 = testkit::scaled_block(
        rng, testkit::orthonormalize(V + 0.3 * testkit::gaussian(rng, 6, 2)), 0.3, 0.95);
    if (!admissible_initial(build_dense(H), FrameBlock(U0)).ok) continue;
    const auto early = analytic_samples(H, U0, 2.0, 30);
    const double c0 = empirical_constants(early).c0;
    const Vector g = symmetric_eigenvalues(gram(analytic_flow_solution(H, FrameBlock(U0), 20.0 / c0)).value);
    EXPECT_LE((g.array() - 1.0).abs().maxCoeff(), 1e-6);

    std::vector<Vector> eigs;
    for (const auto& r : early) eigs.push_back(r.gram_eigs);
    const GramCorridorVerdict v = check_gram_corridor(eigs);
    EXPECT_TRUE(v.pass);
    EXPECT_EQ(v.regime, "sub-stiefel");
  }
}

TEST(GramCorridor, SuperStiefelMirrors) {
  SplitMix64 rng(80);
  const Matrix H = six_by_six();
  const Matrix U0 = testkit::scaled_block(rng, testkit::negative_frame(rng, H, 2), 1.2, 1.8);
  ASSERT_TRUE(admissible_initial(build_dense(H), FrameBlock(U0)).ok);
  std::vector<Vector> eigs;
  for (const auto& r : analytic_samples(H, U0, 5.0, 30)) eigs.push_back(r.gram_eigs);
  const GramCorridorVerdict v = check_gram_corridor(eigs);
  EXPECT_TRUE(v.pass);
  EXPECT_EQ(v.regime, "super-stiefel");
}

TEST(GramCorridor, ViolationsDetected) {
  std::vector<Vector> eigs{Vector::Constant(2, 0.5), Vector::Constant(2, 0.7), Vector::Constant(2, 0.6)};
  const GramCorridorVerdict down = check_gram_corridor(eigs);
  EXPECT_FALSE(down.pass);
  EXPECT_NEAR(down.max_order_violation, 0.1, 1e-12);

  std::vector<Vector> over{Vector::Constant(2, 0.5), Vector::Constant(2, 1.1)};
  EXPECT_FALSE(check_gram_corridor(over).pass);
}

// For negative-definite H and N = 2, Cauchy-Binet gives
// det M = sum_{i<j} d_i d_j (c_i1 c_j2 - c_j1 c_i2)^2 with every term >= 0, so
// lambda_min = det M / lambda_max is accurate to relative precision even when
// ||M|| is astronomically large.
TEST(PsdProbe, RelativeAccuracyAtLargeNorm) {
  SplitMix64 rng(84);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix H = testkit::random_with_range(rng, 6, -3.0, -0.5);
    const Matrix U0 = testkit::gaussian(rng, 6, 2);
    const auto ref = testkit::reference_eig(H);
    const Matrix C = ref.vectors.transpose() * U0;
    for (double t : {1.0, 10.0}) {
      Vector d(6);
      for (Index i = 0; i < 6; ++i) d(i) = std::expm1(-2.0 * t * ref.values(i));
      const Matrix M = C.transpose() * d.asDiagonal() * C;
      double det = 0.0;
      for (Index i = 0; i < 6; ++i)
        for (Index j = i + 1; j < 6; ++j) {
          const double minor = C(i, 0) * C(j, 1) - C(j, 0) * C(i, 1);
          det += d(i) * d(j) * minor * minor;
        }
      const double half_trace = 0.5 * (M(0, 0) + M(1, 1));
      const double top = half_trace + std::hypot(0.5 * (M(0, 0) - M(1, 1)), M(0, 1));
      const double expected = det / top;
      EXPECT_NEAR(psd_probe(H, U0, 2.0, t), expected, 1e-8 * expected) << "trial " << trial << " t " << t;
    }
  }
}

TEST(PsdProbe, RawAndNormalizedAgreeInSign) {
  SplitMix64 rng(81);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix H = testkit::random_with_range(rng, 6, -2, 2);
    const Matrix U0 = testkit::gaussian(rng, 6, 2);
    for (double t : {0.1, 1.0}) {
      const double raw = psd_probe(H, U0, 2.0, t);
      const double norm = psd_probe_normalized(H, U0, 2.0, t);
      if (std::abs(raw) > 1e-8) EXPECT_EQ(raw > 0, norm > 0);
    }
  }
  // Large k t would overflow the raw exponential.
  const Matrix H = six_by_six();
  const Matrix U0 = Matrix::Identity(6, 2);
  EXPECT_TRUE(std::isfinite(psd_probe_normalized(H, U0, 2.0, 500.0)));
  EXPECT_GE(psd_probe_normalized(H, U0, 2.0, 500.0), 0.0);
}

TEST(HessianQuotient, VanishingGradient) {
  const Operator H = shifted_laplacian(10);
  const Matrix V = jacobi_eigensolver(H.to_dense()).eigenvectors.leftCols(2);
  Matrix V0 = V;
  EXPECT_FALSE(hessian_quotient(build_dense(Matrix::Zero(10, 10)), V0).has_value());
  SplitMix64 rng(82);
  const Matrix U = testkit::random_orthonormal(rng, 10, 2);
  EXPECT_TRUE(hessian_quotient(H, U).has_value());
}

TEST(EnergyGap, EigenbasisStart) {
  const Operator H = shifted_laplacian(16);
  const EigenDecomposition eig = jacobi_eigensolver(H.to_dense());
  const Trajectory traj = run_flow(H, FrameBlock(Matrix(eig.eigenvectors.leftCols(3))), SolverConfig{});
  const SpectrumSlice slice({eig.eigenvalues(0), eig.eigenvalues(1), eig.eigenvalues(2)}, eig.eigenvalues(3));
  const EnergyGapVerdict v = energy_gap_check(traj, slice);
  EXPECT_TRUE(v.pass);
  EXPECT_LE(std::abs(v.final_gap), 1e-10 * (1 + std::abs(v.minimum_energy)));
}

TEST(EnergyGap, IncreasingEnergyFails) {
  Trajectory traj;
  for (int k = 0; k < 12; ++k) {
    DiagnosticsRecord r;
    r.t = k;
    r.energy = -1.0 + 0.01 * k;
    r.grad_norm = std::exp(-k);
    r.defect = 0.0;
    r.c0_emp = 1.0;
    r.gram_eigs = Vector::Ones(1);
    r.ritz_values = Vector::Constant(1, -2.0);
    traj.samples.push_back(r);
  }
  const EnergyGapVerdict v = energy_gap_check(traj, SpectrumSlice({-2.0}, -1.0));
  EXPECT_FALSE(v.pass);
  EXPECT_FALSE(v.monotone);
}

TEST(EnergyGap, LaplacianRunPasses) {
  const Operator H = shifted_laplacian(32);
  const FrameBlock U0 = random_admissible_initial(H, 4, 42, InitMode::sub_stiefel);
  const Trajectory traj = run_flow(H, U0, SolverConfig{});
  const EigenDecomposition eig = jacobi_eigensolver(H.to_dense());
  const SpectrumSlice slice({eig.eigenvalues(0), eig.eigenvalues(1), eig.eigenvalues(2), eig.eigenvalues(3)},
                            eig.eigenvalues(4));
  const EnergyGapVerdict v = energy_gap_check(traj, slice);
  EXPECT_TRUE(v.pass) << "min_gap " << v.min_gap << " max_increase " << v.max_increase << " final " << v.final_gap;
  EXPECT_TRUE(check_gradient_decay(traj, SolverConfig{}.grad_tol).pass);
}

TEST(EnergyGap, WidthMismatch) {
  Trajectory traj;
  traj.samples.push_back(make_record(Matrix::Identity(3, 2), Matrix::Zero(3, 2), 0, 0));
  EXPECT_THROW(energy_gap_check(traj, SpectrumSlice({-1.0})), Error);
}

TEST(DistanceBound, LaplacianRun) {
  const Operator H = shifted_laplacian(24);
  const FrameBlock U0 = random_admissible_initial(H, 3, 4, InitMode::sub_stiefel);
  SolverConfig c;
  c.keep_frames = true;
  const Trajectory traj = run_flow(H, U0, c);
  const Matrix target = jacobi_eigensolver(H.to_dense()).eigenvectors.leftCols(3);
  const DistanceBoundVerdict v = check_distance_bound(traj, target);
  EXPECT_TRUE(v.pass) << v.worst_ratio;
  EXPECT_GT(v.checked, 0u);
  EXPECT_LE(subspace_distance(traj.final_state.U, target), 1e-6);
  EXPECT_TRUE(estimate_hessian_mu(H, traj).has_value());

  c.keep_frames = false;
  EXPECT_THROW(check_distance_bound(run_flow(H, U0, c), target), Error);
}

TEST(Perturbation, ZeroMagnitudeIsBitwiseIdentical) {
  const Operator H = shifted_laplacian(16);
  const FrameBlock U0 = random_admissible_initial(H, 2, 9, InitMode::sub_stiefel);
  SolverConfig c;
  c.t_max = 1.0;
  const PerturbationReport r = perturb_and_recover(H, U0, c, 0.01, 0.0, 5);
  ASSERT_EQ(r.reference.samples.size(), r.perturbed.samples.size());
  for (std::size_t i = 0; i < r.reference.samples.size(); ++i) {
    EXPECT_EQ(r.reference.samples[i].t, r.perturbed.samples[i].t);
    EXPECT_EQ(r.reference.samples[i].energy, r.perturbed.samples[i].energy);
    EXPECT_EQ(r.reference.samples[i].defect, r.perturbed.samples[i].defect);
  }
  EXPECT_EQ(r.reference.final_state.U, r.perturbed.final_state.U);
  EXPECT_EQ(r.ritz_max_rel_diff, 0.0);
}

TEST(Perturbation, SmallKickRecovers) {
  const Operator H = shifted_laplacian(32);
  const FrameBlock U0 = random_admissible_initial(H, 4, 42, InitMode::sub_stiefel);
  const SolverConfig c;
  const Trajectory probe = run_flow(H, U0, c);
  const PerturbationReport r = perturb_and_recover(H, U0, c, 0.5 * probe.final_state.t, 1e-6, 7);
  EXPECT_TRUE(r.injected);
  EXPECT_FALSE(r.admissibility_lost);
  EXPECT_GT(r.defect_after, r.defect_before);
  EXPECT_TRUE(r.recovered);
  EXPECT_TRUE(r.ritz_match) << r.ritz_max_rel_diff;
  EXPECT_TRUE(r.pass);
}

TEST(Perturbation, LargeKickFlagsAdmissibilityLoss) {
  // Needs positive eigenvalues for U^T H U to become indefinite.
  const Operator H = build_dense(six_by_six());
  const FrameBlock U0 = random_admissible_initial(H, 2, 3, InitMode::sub_stiefel);
  SolverConfig c;
  c.t_max = 1.0;
  const PerturbationReport r = perturb_and_recover(H, U0, c, 0.0, 1e3, 3);
  EXPECT_TRUE(r.injected);
  EXPECT_TRUE(r.admissibility_lost);
  EXPECT_GE(r.rayleigh_max_after, 0.0);
  EXPECT_FALSE(r.pass);
}

TEST(Perturbation, ArgumentChecks) {
  const Operator H = shifted_laplacian(8);
  const FrameBlock U0 = random_admissible_initial(H, 1, 1, InitMode::stiefel);
  SolverConfig c;
  c.t_max = 1.0;
  EXPECT_THROW(perturb_and_recover(H, U0, c, 2.0, 1e-6, 1), Error);
  EXPECT_THROW(perturb_and_recover(H, U0, c, 0.1, -1.0, 1), Error);
}
