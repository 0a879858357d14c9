#include "grassflow/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/LU>

#include "grassflow/error.hpp"
#include "grassflow/oracle.hpp"

namespace grassflow {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool in_window(double t, const std::optional<FitWindow>& w) {
  return !w || (t >= w->t_lo && t <= w->t_hi);
}

}  // namespace

double DecayFit::prefactor() const { return std::exp(intercept); }

DecayFit fit_exponential_decay(std::span<const double> times, std::span<const double> values,
                               std::optional<FitWindow> window) {
  if (times.size() != values.size()) {
    throw Error(ErrorCode::dimension_mismatch, "fit_exponential_decay: times and values differ in length");
  }
  std::vector<double> ts;
  std::vector<double> ys;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (!in_window(times[i], window)) continue;
    if (!(values[i] > 1e-300)) {
      throw Error(ErrorCode::non_positive_value,
                  "fit_exponential_decay: value " + std::to_string(values[i]) + " at t = " +
                      std::to_string(times[i]) + " cannot be log-fitted");
    }
    ts.push_back(times[i]);
    ys.push_back(std::log(values[i]));
  }
  if (ts.size() < 5) {
    throw Error(ErrorCode::insufficient_samples,
                "fit_exponential_decay: need at least 5 samples, got " + std::to_string(ts.size()));
  }

  const double n = static_cast<double>(ts.size());
  double tm = 0.0, ym = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    tm += ts[i];
    ym += ys[i];
  }
  tm /= n;
  ym /= n;
  double stt = 0.0, sty = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    stt += (ts[i] - tm) * (ts[i] - tm);
    sty += (ts[i] - tm) * (ys[i] - ym);
    syy += (ys[i] - ym) * (ys[i] - ym);
  }
  if (stt == 0.0) {
    throw Error(ErrorCode::insufficient_samples, "fit_exponential_decay: all samples share one time");
  }

  DecayFit fit;
  const double slope = sty / stt;
  fit.rate = -slope;
  fit.intercept = ym - slope * tm;
  fit.samples = ts.size();
  fit.window = window.value_or(FitWindow{*std::min_element(ts.begin(), ts.end()),
                                         *std::max_element(ts.begin(), ts.end())});
  if (syy == 0.0) {
    fit.r_squared = 1.0;
  } else {
    double ss_res = 0.0;
    for (std::size_t i = 0; i < ts.size(); ++i) {
      const double r = ys[i] - (fit.intercept + slope * ts[i]);
      ss_res += r * r;
    }
    fit.r_squared = std::clamp(1.0 - ss_res / syy, 0.0, 1.0);
  }
  return fit;
}

double subspace_distance(const Matrix& U1, const Matrix& U2) {
  if (U1.rows() != U2.rows() || U1.cols() != U2.cols()) {
    throw Error(ErrorCode::dimension_mismatch, "subspace_distance: blocks differ in shape");
  }
  if (U1.cols() == 0) return 0.0;
  const SmallSvd svd = svd_small(U1.transpose() * U2);
  const Matrix Q = svd.U * svd.V.transpose();
  return (U1 * Q - U2).norm();
}

double subspace_distance(const FrameBlock& U1, const FrameBlock& U2) {
  return subspace_distance(U1.matrix(), U2.matrix());
}

ProjectorResiduals projector_residuals(const Matrix& H, const Matrix& U) {
  if (H.rows() != H.cols() || H.rows() != U.rows()) {
    throw Error(ErrorCode::dimension_mismatch, "projector_residuals: H and U do not conform");
  }
  if (H.rows() > 512) {
    throw Error(ErrorCode::invalid_argument, "projector_residuals: n > 512 would form an n x n projector");
  }
  const Matrix Z = U * U.transpose();
  const Matrix HZ = H * Z;
  ProjectorResiduals r;
  r.r_eq = (HZ + HZ.transpose() - 2.0 * Z * HZ).norm() / (1.0 + H.norm());
  r.r_idem = (Z * Z - Z).norm();
  return r;
}

DefectBoundVerdict check_defect_bound(std::span<const DiagnosticsRecord> samples, Index ambient_dim,
                                      const DefectBoundOptions& options) {
  DefectBoundVerdict v;
  v.fitted_rate = kNaN;
  v.rate_ratio = kNaN;
  if (samples.empty()) {
    throw Error(ErrorCode::insufficient_samples, "check_defect_bound: empty trajectory");
  }
  const auto width = samples.front().gram_eigs.size();
  v.floor = options.absolute_floor.value_or(4.0 * static_cast<double>(ambient_dim) *
                                            static_cast<double>(width) *
                                            std::numeric_limits<double>::epsilon());
  v.defect0 = samples.front().defect;
  v.c0_min = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) v.c0_min = std::min(v.c0_min, s.c0_emp);

  if (!(v.c0_min > 0.0)) {
    v.note = "c0_emp is not positive along the run";
  }

  v.monotone = true;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const auto& s = samples[k];
    const double bound =
        v.defect0 * std::exp(-2.0 * v.c0_min * s.t) * (1.0 + options.relative_slack) + v.floor;
    const double ratio = s.defect / bound;
    v.worst_ratio = std::max(v.worst_ratio, ratio);
    if (s.defect > bound) ++v.violations;
    if (k > 0 && s.defect > samples[k - 1].defect + options.monotone_slack) v.monotone = false;
  }
  v.pass = v.violations == 0 && v.c0_min > 0.0;

  // Rate fit over the part of the run that is still above rounding level.
  std::vector<double> ts, ds;
  for (const auto& s : samples) {
    if (s.defect > 100.0 * v.floor) {
      ts.push_back(s.t);
      ds.push_back(s.defect);
    }
  }
  if (ts.size() >= 5) {
    try {
      const DecayFit fit = fit_exponential_decay(ts, ds);
      v.fitted_rate = fit.rate;
      if (v.c0_min > 0.0) v.rate_ratio = fit.rate / (2.0 * v.c0_min);
    } catch (const Error&) {
    }
  }
  return v;
}

DefectBoundVerdict check_defect_bound(const Trajectory& traj, const DefectBoundOptions& options) {
  return check_defect_bound(traj.samples, traj.final_state.U.rows(), options);
}

EmpiricalConstants empirical_constants(std::span<const DiagnosticsRecord> samples) {
  if (samples.size() < 10) {
    throw Error(ErrorCode::insufficient_samples,
                "empirical_constants: need at least 10 samples, got " + std::to_string(samples.size()));
  }
  EmpiricalConstants c;
  c.c0 = std::numeric_limits<double>::infinity();
  for (const auto& s : samples) c.c0 = std::min(c.c0, s.c0_emp);

  const double t0 = samples.front().t;
  const double t1 = samples.back().t;
  const double t_mid = 0.5 * (t0 + t1);
  std::size_t first = 0;
  while (first < samples.size() && samples[first].t < t_mid) ++first;
  // Keep at least five points even when the second half is sparsely sampled.
  first = std::min(first, samples.size() - 5);
  c.window = FitWindow{samples[first].t, t1};

  double ritz_scale = 0.0;
  double grad_max = 0.0;
  for (std::size_t k = first; k < samples.size(); ++k) {
    grad_max = std::max(grad_max, samples[k].grad_norm);
    if (samples[k].ritz_values.size() > 0) {
      ritz_scale = std::max(ritz_scale, samples[k].ritz_values.cwiseAbs().maxCoeff());
    }
  }
  if (grad_max <= 1e-12 * (1.0 + ritz_scale)) {
    c.already_converged = true;
    c.gamma = kNaN;
    c.K = kNaN;
    c.r_squared = kNaN;
    return c;
  }

  std::vector<double> ts, gs;
  for (std::size_t k = first; k < samples.size(); ++k) {
    if (samples[k].grad_norm > 1e-300) {
      ts.push_back(samples[k].t);
      gs.push_back(samples[k].grad_norm);
    }
  }
  const DecayFit fit = fit_exponential_decay(ts, gs);
  c.gamma = fit.rate;
  c.K = fit.prefactor();
  c.r_squared = fit.r_squared;
  return c;
}

EmpiricalConstants empirical_constants(const Trajectory& traj) {
  return empirical_constants(std::span<const DiagnosticsRecord>(traj.samples));
}

std::optional<double> hessian_quotient(const Operator& H, const Matrix& U) {
  const Matrix HU = H.apply(U);
  const Matrix R = symmetrize(U.transpose() * HU);
  const Matrix g = HU - U * R;
  const double gg = g.squaredNorm();
  if (!(gg > 1e-300)) return std::nullopt;
  const Matrix Hg = H.apply(g);
  return (Hg - g * R).cwiseProduct(g).sum() / gg;
}

std::optional<double> estimate_hessian_mu(const Operator& H, const Trajectory& traj) {
  std::optional<double> mu;
  for (const auto& U : traj.frames) {
    const auto q = hessian_quotient(H, U);
    if (q) mu = mu ? std::min(*mu, *q) : *q;
  }
  return mu;
}

GramCorridorVerdict check_gram_corridor(std::span<const Vector> gram_eigs, double slack) {
  GramCorridorVerdict v;
  if (gram_eigs.empty()) {
    throw Error(ErrorCode::insufficient_samples, "check_gram_corridor: empty sequence");
  }
  const Vector& s0 = gram_eigs.front();
  const Index N = s0.size();
  for (const auto& s : gram_eigs) {
    if (s.size() != N) {
      throw Error(ErrorCode::dimension_mismatch, "check_gram_corridor: inconsistent widths");
    }
  }
  if (N == 0) {
    v.pass = true;
    v.regime = "sub-stiefel";
    v.beta = 1.0;
    return v;
  }
  const double lo0 = s0.minCoeff();
  const double hi0 = s0.maxCoeff();
  v.beta = std::min(1.0, lo0);
  if (hi0 <= 1.0) {
    v.regime = "sub-stiefel";
  } else if (lo0 >= 1.0) {
    v.regime = "super-stiefel";
  } else {
    v.regime = "mixed";
  }

  for (std::size_t k = 0; k < gram_eigs.size(); ++k) {
    const Vector& s = gram_eigs[k];
    for (Index i = 0; i < N; ++i) {
      const double below = v.beta - s(i);
      v.max_bound_violation = std::max(v.max_bound_violation, below);
      if (v.regime == "sub-stiefel") {
        v.max_bound_violation = std::max(v.max_bound_violation, s(i) - 1.0);
        if (k > 0) v.max_order_violation = std::max(v.max_order_violation, gram_eigs[k - 1](i) - s(i));
      } else if (v.regime == "super-stiefel") {
        v.max_bound_violation = std::max(v.max_bound_violation, 1.0 - s(i));
        if (k > 0) v.max_order_violation = std::max(v.max_order_violation, s(i) - gram_eigs[k - 1](i));
      }
    }
  }
  v.pass = v.max_bound_violation <= slack && v.max_order_violation <= slack;
  return v;
}

GramCorridorVerdict check_gram_corridor(const Trajectory& traj, double slack) {
  std::vector<Vector> eigs;
  eigs.reserve(traj.samples.size());
  for (const auto& s : traj.samples) eigs.push_back(s.gram_eigs);
  return check_gram_corridor(eigs, slack);
}

namespace {

// log(expm1(x)) for x > 0 without overflow.
double log_expm1(double x) { return x > 30.0 ? x + std::log1p(-std::exp(-x)) : std::log(std::expm1(x)); }

}  // namespace

// With d = expm1(-k t lambda), M = C^T diag(d) C where C = V^T U0. Forming M
// directly loses everything below eps ||M||, and ||M|| grows like e^{k t |lambda_1|}.
// Instead pick N leading rows P of C, write C = Y C_P and
//   M = C_P^T D^{1/2} T D^{1/2} C_P,  T = I + sum_{i not in P} d_i z_i z_i^T,
// with D = diag(d_P) and z_i = D^{-1/2} y_i. T and C_P^{-1} D^{-1/2} are moderate,
// so M^{-1} is accurate to its own norm and 1 / lambda_max(M^{-1}) is accurate
// relative to lambda_min(M). Falls back to the direct form when M is not SPD.
double psd_probe(const Matrix& H, const Matrix& U0, double k, double t) {
  if (H.rows() != U0.rows()) {
    throw Error(ErrorCode::dimension_mismatch, "psd_probe: H and U0 do not conform");
  }
  const Index N = U0.cols();
  const EigenDecomposition eig = jacobi_eigensolver(H);
  const Matrix C = eig.eigenvectors.transpose() * U0;
  const Vector x = -k * t * eig.eigenvalues;

  const auto direct = [&] {
    const Vector d = x.unaryExpr([](double v) { return std::expm1(v); });
    return symmetric_eigenvalues(symmetrize(C.transpose() * d.asDiagonal() * C))(0);
  };

  const std::vector<Index> rows = leading_rows(C);
  if (static_cast<Index>(rows.size()) < N) return direct();
  Matrix C_P(N, N);
  Vector log_d(N);
  for (Index j = 0; j < N; ++j) {
    if (!(x(rows[j]) > 0.0)) return direct();
    C_P.row(j) = C.row(rows[j]);
    log_d(j) = log_expm1(x(rows[j]));
  }
  const Matrix K = Eigen::PartialPivLU<Matrix>(C_P).solve(Matrix::Identity(N, N));
  const Matrix Y = C * K;

  Matrix T = Matrix::Identity(N, N);
  std::vector<bool> pivot(static_cast<std::size_t>(C.rows()), false);
  for (Index r : rows) pivot[static_cast<std::size_t>(r)] = true;
  for (Index i = 0; i < C.rows(); ++i) {
    if (pivot[static_cast<std::size_t>(i)] || x(i) == 0.0) continue;
    const double log_abs = x(i) > 0.0 ? log_expm1(x(i)) : std::log(-std::expm1(x(i)));
    Vector z(N);
    for (Index j = 0; j < N; ++j) z(j) = Y(i, j) * std::exp(0.5 * (log_abs - log_d(j)));
    T += (x(i) > 0.0 ? 1.0 : -1.0) * z * z.transpose();
  }
  T = symmetrize(T);
  if (!T.allFinite()) return direct();
  const EigenDecomposition teig = jacobi_eigensolver(T);
  if (!(teig.eigenvalues(0) > 0.0)) return direct();

  const Vector half = (-0.5 * log_d).array().exp();
  const Matrix G = K * half.asDiagonal() * teig.eigenvectors *
                   teig.eigenvalues.cwiseSqrt().cwiseInverse().asDiagonal();
  const double top = symmetric_eigenvalues(symmetrize(G * G.transpose())).maxCoeff();
  return 1.0 / top;
}

double psd_probe_normalized(const Matrix& H, const Matrix& U0, double k, double t) {
  if (H.rows() != U0.rows()) {
    throw Error(ErrorCode::dimension_mismatch, "psd_probe_normalized: H and U0 do not conform");
  }
  const EigenDecomposition eig = jacobi_eigensolver(H);
  const Matrix C = eig.eigenvectors.transpose() * U0;
  const Vector expo = -k * t * eig.eigenvalues;
  const double s = std::max(expo.maxCoeff(), 0.0);
  const Vector w = (expo.array() - s).exp().matrix();
  // M' = exp(-s) M; the normalization below makes the factor drop out
  // whenever ||M||_2 >= 1.
  const Matrix Ms = symmetrize(C.transpose() * w.asDiagonal() * C - std::exp(-s) * (U0.transpose() * U0));
  // M = exp(s) Ms; divide by max(1, ||M||_2) without forming exp(s).
  const Vector ev = symmetric_eigenvalues(Ms);
  const double norm_s = ev.cwiseAbs().maxCoeff();
  if (ev(0) == 0.0) return 0.0;
  if (std::log(norm_s) + s >= 0.0) return ev(0) / norm_s;
  return std::copysign(std::exp(std::log(std::abs(ev(0))) + s), ev(0));
}

GradientDecayVerdict check_gradient_decay(const Trajectory& traj, double grad_tol,
                                          double min_r_squared) {
  GradientDecayVerdict v;
  if (traj.samples.empty()) {
    throw Error(ErrorCode::insufficient_samples, "check_gradient_decay: empty trajectory");
  }
  v.final_grad = traj.samples.back().grad_norm;
  v.constants = empirical_constants(traj);
  if (v.constants.already_converged) {
    v.pass = v.final_grad <= grad_tol;
  } else {
    v.pass = v.constants.r_squared >= min_r_squared && v.constants.gamma > 0.0 &&
             v.final_grad <= grad_tol;
  }
  return v;
}

EnergyGapVerdict energy_gap_check(const Trajectory& traj, const SpectrumSlice& oracle,
                                  const EnergyGapOptions& options) {
  EnergyGapVerdict v;
  if (traj.samples.empty()) {
    throw Error(ErrorCode::insufficient_samples, "energy_gap_check: empty trajectory");
  }
  const Vector lambda = Eigen::Map<const Vector>(oracle.eigenvalues().data(),
                                                 static_cast<Index>(oracle.eigenvalues().size()));
  if (lambda.size() != traj.samples.front().ritz_values.size()) {
    throw Error(ErrorCode::dimension_mismatch, "energy_gap_check: oracle slice width differs from N");
  }
  v.minimum_energy = 0.5 * lambda.sum();
  v.min_gap = std::numeric_limits<double>::infinity();
  double prev = 0.0;
  for (std::size_t k = 0; k < traj.samples.size(); ++k) {
    const double gap = traj.samples[k].energy - v.minimum_energy;
    v.min_gap = std::min(v.min_gap, gap);
    if (k > 0) v.max_increase = std::max(v.max_increase, gap - prev);
    prev = gap;
  }
  v.final_gap = prev;
  v.nonnegative = v.min_gap >= -options.slack;
  v.monotone = v.max_increase <= options.slack;

  const auto& first = traj.samples.front();
  const double t = traj.samples.back().t - first.t;
  std::optional<EmpiricalConstants> constants;
  if (traj.samples.size() >= 10) {
    try {
      constants = empirical_constants(traj);
    } catch (const Error&) {
    }
  }
  if (constants && constants->c0 > 0.0) {
    const double l1 = lambda.size() > 0 ? lambda(0) : 0.0;
    v.bound = l1 * l1 / (2.0 * constants->c0) * first.defect * std::exp(-2.0 * constants->c0 * t);
    if (!constants->already_converged && constants->gamma > 0.0) {
      const double kg = constants->K / constants->gamma;
      v.bound += kg * kg * std::exp(-2.0 * constants->gamma * t);
    }
  }
  v.within_bound = v.final_gap <= std::max(options.safety * v.bound, options.slack);
  v.pass = v.nonnegative && v.monotone && v.within_bound;
  return v;
}

DistanceBoundVerdict check_distance_bound(const Trajectory& traj, const Matrix& target,
                                          double safety) {
  DistanceBoundVerdict v;
  if (traj.frames.size() != traj.samples.size()) {
    throw Error(ErrorCode::invalid_argument, "check_distance_bound: trajectory was run without keep_frames");
  }
  const EmpiricalConstants c = empirical_constants(traj);
  if (c.already_converged) {
    // Nothing left to decay; compare against the target directly.
    const double d = subspace_distance(traj.frames.back(), target);
    v.checked = 1;
    v.worst_ratio = d;
    v.pass = d <= 1e-8;
    return v;
  }
  for (std::size_t k = 0; k < traj.samples.size(); ++k) {
    const double t = traj.samples[k].t;
    if (t < c.window.t_lo) continue;
    const double bound = safety * c.K / c.gamma * std::exp(-c.gamma * t);
    const double d = subspace_distance(traj.frames[k], target);
    v.worst_ratio = std::max(v.worst_ratio, d / bound);
    ++v.checked;
  }
  v.pass = v.checked > 0 && c.gamma > 0.0 && v.worst_ratio <= 1.0;
  return v;
}

PerturbationReport perturb_and_recover(const Operator& H, const FrameBlock& U0,
                                       const SolverConfig& config, double t_inject,
                                       double magnitude, std::uint64_t seed) {
  if (!(t_inject >= 0.0) || !(t_inject < config.t_max)) {
    throw Error(ErrorCode::invalid_argument, "perturb_and_recover: t_inject must lie in [0, t_max)");
  }
  if (!(magnitude >= 0.0) || !std::isfinite(magnitude)) {
    throw Error(ErrorCode::invalid_argument, "perturb_and_recover: magnitude must be finite and >= 0");
  }

  PerturbationReport rep;
  rep.reference = run_flow(H, U0, config);

  const StepHook hook = [&](FlowState& state) {
    if (rep.injected || state.t < t_inject) return false;
    rep.injected = true;
    rep.t_injected = state.t;
    rep.defect_before = ortho_defect(state.U);
    if (magnitude == 0.0) {
      rep.defect_after = rep.defect_before;
      return false;
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix P(state.U.rows(), state.U.cols());
    for (Index j = 0; j < P.cols(); ++j) {
      for (Index i = 0; i < P.rows(); ++i) P(i, j) = normal(rng);
    }
    const double pn = P.norm();
    if (pn > 0.0) P *= magnitude / pn;
    state.U += P;
    state.cached_HU.reset();
    rep.defect_after = ortho_defect(state.U);
    const AdmissibilityReport adm = admissible_initial(H, FrameBlock(state.U), config.admissibility);
    rep.rayleigh_max_after = adm.rayleigh_max_eig;
    rep.admissibility_lost = !adm.ok;
    return true;
  };
  rep.perturbed = run_flow(H, U0, config, hook);

  if (!rep.injected) {
    // The perturbed run stopped before reaching t_inject.
    rep.pass = false;
    return rep;
  }

  std::vector<double> ts, ds;
  bool found = false;
  const double floor = 4.0 * static_cast<double>(U0.ambient_dim() * U0.width()) *
                       std::numeric_limits<double>::epsilon();
  for (const auto& s : rep.perturbed.samples) {
    if (s.t < rep.t_injected) continue;
    if (!found && s.defect <= config.defect_tol) {
      found = true;
      rep.recovery_time = s.t;
    }
    if (s.defect > 100.0 * floor) {
      ts.push_back(s.t);
      ds.push_back(s.defect);
    }
  }
  rep.recovered = found && rep.perturbed.stop_reason != StopReason::diverged &&
                  rep.perturbed.stop_reason != StopReason::step_underflow;
  if (ts.size() >= 5) {
    try {
      rep.post_fit = fit_exponential_decay(ts, ds);
    } catch (const Error&) {
    }
  }

  const Vector& rr = rep.reference.samples.back().ritz_values;
  const Vector& rp = rep.perturbed.samples.back().ritz_values;
  rep.ritz_max_rel_diff = 0.0;
  for (Index i = 0; i < rr.size(); ++i) {
    const double d = std::abs(rp(i) - rr(i)) / std::max(1.0, std::abs(rr(i)));
    rep.ritz_max_rel_diff = std::max(rep.ritz_max_rel_diff, d);
  }
  rep.ritz_match = rep.ritz_max_rel_diff <= 1e-6;
  rep.pass = rep.recovered && rep.ritz_match && !rep.admissibility_lost;
  return rep;
}

}  // namespace grassflow
