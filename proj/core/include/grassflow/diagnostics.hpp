#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "grassflow/integrators.hpp"

namespace grassflow {

struct FitWindow {
  double t_lo = 0.0;
  double t_hi = 0.0;
};

/// log(value) ~ intercept - rate * t
struct DecayFit {
  double rate = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  FitWindow window{};
  std::size_t samples = 0;

  double prefactor() const;  // exp(intercept)
};

/// Ordinary least squares of log(value) against t over the samples inside
/// `window` (all samples when omitted). Needs >= 5 samples, all > 1e-300.
DecayFit fit_exponential_decay(std::span<const double> times, std::span<const double> values,
                               std::optional<FitWindow> window = std::nullopt);

/// Minimal ||U1 Q - U2||_F over orthogonal Q, with Q from the polar factor of
/// U1^T U2 (orthogonal Procrustes).
double subspace_distance(const Matrix& U1, const Matrix& U2);
double subspace_distance(const FrameBlock& U1, const FrameBlock& U2);

struct ProjectorResiduals {
  double r_eq = 0.0;    // ||HZ + ZH - 2ZHZ||_F / (1 + ||H||_F)
  double r_idem = 0.0;  // ||Z^2 - Z||_F
};

/// Residuals of the limit equations for Z = U U^T. Dense H, n <= 512.
ProjectorResiduals projector_residuals(const Matrix& H, const Matrix& U);

struct DefectBoundOptions {
  double relative_slack = 1e-6;
  double monotone_slack = 1e-10;
  /// Additive allowance for rounding in the computed defect. Defaults to
  /// 4 n N eps, well below any stopping tolerance in use.
  std::optional<double> absolute_floor;
};

struct DefectBoundVerdict {
  bool pass = false;
  bool monotone = false;
  double defect0 = 0.0;
  double c0_min = 0.0;
  double floor = 0.0;
  std::size_t violations = 0;
  double worst_ratio = 0.0;   // max defect(t) / bound(t)
  double fitted_rate = 0.0;   // NaN when too few samples sit above the floor
  double rate_ratio = 0.0;    // fitted_rate / (2 c0_min)
  std::string note;
};

/// defect(t) <= defect(0) exp(-2 c0_min t) (1 + slack) + floor at every
/// sample, with c0_min the minimum of c0_emp over the samples.
DefectBoundVerdict check_defect_bound(const Trajectory& traj, const DefectBoundOptions& options = {});
DefectBoundVerdict check_defect_bound(std::span<const DiagnosticsRecord> samples, Index ambient_dim,
                                      const DefectBoundOptions& options = {});

struct EmpiricalConstants {
  double c0 = 0.0;
  double gamma = 0.0;
  double K = 0.0;
  double r_squared = 0.0;
  bool already_converged = false;  // gamma and K are NaN
  FitWindow window{};
};

/// c0 = min c0_emp; (gamma, K) from an exponential fit of grad_norm over the
/// second half of the time span. Needs >= 10 samples.
EmpiricalConstants empirical_constants(std::span<const DiagnosticsRecord> samples);
EmpiricalConstants empirical_constants(const Trajectory& traj);

/// <H g - g U^T H U, g> / ||g||^2 with g the Grassmann gradient, or nullopt
/// when g vanishes.
std::optional<double> hessian_quotient(const Operator& H, const Matrix& U);

/// Minimum hessian_quotient over the stored frames (keep_frames runs only).
/// Reported as a diagnostic, never checked.
std::optional<double> estimate_hessian_mu(const Operator& H, const Trajectory& traj);

struct GramCorridorVerdict {
  bool pass = false;
  std::string regime;  // "sub-stiefel", "super-stiefel" or "mixed"
  double beta = 0.0;   // min(1, sigma_1(0))
  double max_order_violation = 0.0;
  double max_bound_violation = 0.0;
};

/// Singular-value corridor for a sequence of ascending Gram eigenvalue
/// vectors: with sigma(0) <= 1 each sigma_i is nondecreasing and lies in
/// [beta, 1]; with sigma(0) >= 1 it is nonincreasing and >= 1; otherwise only
/// sigma_i >= beta is checked.
GramCorridorVerdict check_gram_corridor(std::span<const Vector> gram_eigs, double slack = 1e-8);
GramCorridorVerdict check_gram_corridor(const Trajectory& traj, double slack = 1e-8);

/// lambda_min(U0^T exp(-k H t) U0 - U0^T U0). Dense H. When the matrix is SPD
/// the result is accurate relative to itself, not to the matrix norm.
double psd_probe(const Matrix& H, const Matrix& U0, double k, double t);

/// Same sign as psd_probe, divided by max(1, ||M||_2), and evaluated with the
/// exponentials rescaled so that large k t cannot overflow.
double psd_probe_normalized(const Matrix& H, const Matrix& U0, double k, double t);

struct GradientDecayVerdict {
  bool pass = false;
  double final_grad = 0.0;
  EmpiricalConstants constants{};
};

/// Exponential fit of the gradient norm has r^2 >= min_r_squared and a
/// positive rate, and the final gradient is <= grad_tol.
GradientDecayVerdict check_gradient_decay(const Trajectory& traj, double grad_tol,
                                          double min_r_squared = 0.95);

struct EnergyGapOptions {
  double slack = 1e-10;
  double safety = 10.0;
};

struct EnergyGapVerdict {
  bool pass = false;
  double minimum_energy = 0.0;  // 1/2 sum lambda_i
  double min_gap = 0.0;
  double max_increase = 0.0;
  double final_gap = 0.0;
  double bound = 0.0;           // composed bound at the final time, before safety
  bool nonnegative = false;
  bool monotone = false;
  bool within_bound = false;
};

/// E(U(t)) - 1/2 sum lambda_i is >= -slack, nonincreasing up to slack, and at
/// the final sample below safety times the composed bound
/// |lambda_1|^2/(2 c0) defect(0) exp(-2 c0 t) + (K/gamma)^2 exp(-2 gamma t)
/// (or below slack when no bound can be formed).
EnergyGapVerdict energy_gap_check(const Trajectory& traj, const SpectrumSlice& oracle,
                                  const EnergyGapOptions& options = {});

struct DistanceBoundVerdict {
  bool pass = false;
  std::size_t checked = 0;
  double worst_ratio = 0.0;  // max dist / (safety K/gamma exp(-gamma t))
};

/// subspace_distance(U(t), target) <= safety (K/gamma) exp(-gamma t) over the
/// fit window of the empirical constants. Needs keep_frames.
DistanceBoundVerdict check_distance_bound(const Trajectory& traj, const Matrix& target,
                                          double safety = 10.0);

struct PerturbationReport {
  bool injected = false;
  double t_injected = 0.0;
  double defect_before = 0.0;
  double defect_after = 0.0;
  bool admissibility_lost = false;
  double rayleigh_max_after = 0.0;
  std::optional<DecayFit> post_fit;
  bool recovered = false;
  double recovery_time = 0.0;     // first sample time after injection with defect <= defect_tol
  double ritz_max_rel_diff = 0.0;  // final Ritz values, perturbed vs reference
  bool ritz_match = false;
  bool pass = false;
  Trajectory reference;
  Trajectory perturbed;
};

/// Runs the flow twice from U0: once as is, once with a seeded Gaussian
/// block of Frobenius norm `magnitude` added at the first accepted step with
/// t >= t_inject. Passes iff the defect returns to <= defect_tol before
/// t_max and the final Ritz values agree with the reference to 1e-6.
PerturbationReport perturb_and_recover(const Operator& H, const FrameBlock& U0,
                                       const SolverConfig& config, double t_inject,
                                       double magnitude, std::uint64_t seed);

}  // namespace grassflow
