#include "grassflow/integrators.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "grassflow/error.hpp"

namespace grassflow {

std::string_view scheme_name(Scheme scheme) noexcept {
  switch (scheme) {
    case Scheme::euler: return "euler";
    case Scheme::rk4: return "rk4";
    case Scheme::rk4_adaptive: return "rk4-adaptive";
  }
  return "unknown";
}

std::optional<Scheme> parse_scheme(std::string_view name) noexcept {
  if (name == "euler") return Scheme::euler;
  if (name == "rk4") return Scheme::rk4;
  if (name == "rk4-adaptive" || name == "rk4_adaptive") return Scheme::rk4_adaptive;
  return std::nullopt;
}

std::string_view stop_reason_name(StopReason reason) noexcept {
  switch (reason) {
    case StopReason::grad_converged: return "grad_converged";
    case StopReason::defect_and_grad_converged: return "defect_and_grad_converged";
    case StopReason::t_max_reached: return "t_max_reached";
    case StopReason::step_underflow: return "step_underflow";
    case StopReason::diverged: return "diverged";
  }
  return "unknown";
}

void SolverConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, what); };
  if (!(dt_min > 0.0)) fail("dt_min must be > 0");
  if (!(dt_min <= dt && dt <= dt_max)) fail("need dt_min <= dt <= dt_max");
  if (!(safety > 0.0 && safety <= 1.0)) fail("safety must lie in (0, 1]");
  if (!(rtol > 0.0)) fail("rtol must be > 0");
  if (!(grad_tol > 0.0)) fail("grad_tol must be > 0");
  if (!(defect_tol > 0.0)) fail("defect_tol must be > 0");
  if (!(t_max >= 0.0)) fail("t_max must be >= 0");
  if (record_every < 1) fail("record_every must be >= 1");
  if (max_steps < 0) fail("max_steps must be >= 0");
}

namespace {

/// -(H U - U U^T H U), reusing H U when supplied.
Matrix flow_rhs(const Operator& H, const Matrix& U, const Matrix* HU, std::int64_t& applies) {
  if (HU != nullptr) return -grassmann_gradient(U, *HU);
  ++applies;
  return -grassmann_gradient(U, H.apply(U));
}

void require_finite(const Matrix& U, double t) {
  if (!U.allFinite()) {
    std::ostringstream msg;
    msg << "non-finite state at t = " << t << " (step too large for this operator?)";
    throw Error(ErrorCode::non_finite_state, msg.str());
  }
}

void require_step(double dt) {
  if (!(dt >= 0.0)) throw Error(ErrorCode::invalid_argument, "step size must be >= 0");
}

const Matrix* cached(const FlowState& s) { return s.cached_HU ? &*s.cached_HU : nullptr; }

}  // namespace

FlowState step_euler(const Operator& H, const FlowState& state, double dt) {
  require_step(dt);
  if (dt == 0.0) return state;
  FlowState next;
  next.apply_count = state.apply_count;
  const Matrix k1 = flow_rhs(H, state.U, cached(state), next.apply_count);
  next.U = state.U + dt * k1;
  next.t = state.t + dt;
  next.step_count = state.step_count + 1;
  require_finite(next.U, next.t);
  return next;
}

FlowState step_rk4(const Operator& H, const FlowState& state, double dt) {
  require_step(dt);
  if (dt == 0.0) return state;
  FlowState next;
  next.apply_count = state.apply_count;
  const Matrix& U = state.U;
  const Matrix k1 = flow_rhs(H, U, cached(state), next.apply_count);
  const Matrix k2 = flow_rhs(H, U + (0.5 * dt) * k1, nullptr, next.apply_count);
  const Matrix k3 = flow_rhs(H, U + (0.5 * dt) * k2, nullptr, next.apply_count);
  const Matrix k4 = flow_rhs(H, U + dt * k3, nullptr, next.apply_count);
  next.U = U + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  next.t = state.t + dt;
  next.step_count = state.step_count + 1;
  require_finite(next.U, next.t);
  return next;
}

namespace {

struct Stage {
  Matrix rhs;
  Matrix R;
};

Stage eval_stage(const Operator& H, const Matrix& U, const Matrix* HU, std::int64_t& applies) {
  Matrix HUm;
  if (HU != nullptr) {
    HUm = *HU;
  } else {
    HUm = H.apply(U);
    ++applies;
  }
  Stage s;
  s.R = symmetrize(U.transpose() * HUm);
  s.rhs = U * s.R - HUm;
  return s;
}

Matrix defect_rate(const Matrix& D, const Matrix& R) { return D * R + R * D; }

// (I - D)^{1/2} G^{-1/2} acting from the right, or nullopt when either
// factor is not positive definite.
std::optional<Matrix> gram_correction(const Matrix& G, const Matrix& target) {
  Eigen::SelfAdjointEigenSolver<Matrix> g(G);
  Eigen::SelfAdjointEigenSolver<Matrix> t(target);
  if (g.info() != Eigen::Success || t.info() != Eigen::Success) return std::nullopt;
  if (!(g.eigenvalues().minCoeff() > 0.0) || !(t.eigenvalues().minCoeff() > 0.0)) return std::nullopt;
  const Matrix g_inv_sqrt =
      g.eigenvectors() * g.eigenvalues().array().rsqrt().matrix().asDiagonal() * g.eigenvectors().transpose();
  const Matrix t_sqrt =
      t.eigenvectors() * t.eigenvalues().array().sqrt().matrix().asDiagonal() * t.eigenvectors().transpose();
  return g_inv_sqrt * t_sqrt;
}

}  // namespace

FlowState step_rk4_gram_consistent(const Operator& H, const FlowState& state, double dt) {
  require_step(dt);
  if (dt == 0.0) return state;
  FlowState next;
  next.apply_count = state.apply_count;
  const Matrix& U = state.U;
  const Index N = U.cols();
  const Matrix I = Matrix::Identity(N, N);

  const Stage s1 = eval_stage(H, U, cached(state), next.apply_count);
  const Stage s2 = eval_stage(H, U + (0.5 * dt) * s1.rhs, nullptr, next.apply_count);
  const Stage s3 = eval_stage(H, U + (0.5 * dt) * s2.rhs, nullptr, next.apply_count);
  const Stage s4 = eval_stage(H, U + dt * s3.rhs, nullptr, next.apply_count);
  next.U = U + (dt / 6.0) * (s1.rhs + 2.0 * s2.rhs + 2.0 * s3.rhs + s4.rhs);
  next.t = state.t + dt;
  next.step_count = state.step_count + 1;
  require_finite(next.U, next.t);

  const Matrix D0 = I - gram(U).value;
  const Matrix d1 = defect_rate(D0, s1.R);
  const Matrix d2 = defect_rate(D0 + (0.5 * dt) * d1, s2.R);
  const Matrix d3 = defect_rate(D0 + (0.5 * dt) * d2, s3.R);
  const Matrix d4 = defect_rate(D0 + dt * d3, s4.R);
  const Matrix D1 = symmetrize(D0 + (dt / 6.0) * (d1 + 2.0 * d2 + 2.0 * d3 + d4));

  if (const auto S = gram_correction(gram(next.U).value, I - D1)) {
    next.U = next.U * *S;
    require_finite(next.U, next.t);
  }
  return next;
}

namespace {

std::string underflow_message(const Operator& H, double dt, double dt_min, std::uint64_t seed) {
  const double rho = estimate_spectral_radius(H, 20, seed);
  std::ostringstream msg;
  msg << "step rejected at dt = " << dt << " <= dt_min = " << dt_min
      << "; spectral radius estimate sigma_max ~ " << rho
      << ", explicit RK4 needs dt on the order of 1.39 / (2 sigma_max) = "
      << (rho > 0.0 ? 1.39 / (2.0 * rho) : std::numeric_limits<double>::infinity());
  return msg.str();
}

/// One step-doubling attempt with no range check on dt, so the driver can take
/// a final short step that lands exactly on t_max.
AdaptiveStep adaptive_attempt(const Operator& H, const FlowState& state, double dt,
                              const SolverConfig& config) {
  FlowState start = state;
  if (!start.cached_HU) {
    start.cached_HU = H.apply(start.U);
    ++start.apply_count;
  }

  AdaptiveStep out;
  double err = std::numeric_limits<double>::infinity();
  FlowState two_half;
  try {
    const auto step = config.gram_consistent ? step_rk4_gram_consistent : step_rk4;
    const FlowState full = step(H, start, dt);
    const FlowState half = step(H, start, 0.5 * dt);
    two_half = step(H, half, 0.5 * dt);
    two_half.apply_count += full.apply_count - start.apply_count;
    err = (full.U - two_half.U).norm() / (1.0 + start.U.norm());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::non_finite_state) throw;
  }
  out.error_estimate = err;
  out.accepted = err <= config.rtol;

  double proposal;
  if (err == 0.0) {
    proposal = config.dt_max;
  } else if (std::isfinite(err)) {
    proposal = config.safety * dt * std::pow(config.rtol / err, 0.2);
  } else {
    proposal = 0.25 * dt;
  }

  if (out.accepted) {
    out.state = std::move(two_half);
    out.state.t = state.t + dt;
    out.state.step_count = state.step_count + 1;
    out.state.cached_HU.reset();
    out.dt_next = std::clamp(proposal, config.dt_min, config.dt_max);
  } else {
    if (dt <= config.dt_min) {
      throw Error(ErrorCode::step_underflow, underflow_message(H, dt, config.dt_min, config.seed));
    }
    out.state = std::move(start);
    out.dt_next = std::clamp(std::min(proposal, dt), config.dt_min, config.dt_max);
  }
  return out;
}

}  // namespace

AdaptiveStep step_rk4_adaptive(const Operator& H, const FlowState& state, double dt,
                               const SolverConfig& config) {
  if (!(dt >= config.dt_min && dt <= config.dt_max)) {
    throw Error(ErrorCode::invalid_argument, "adaptive step size outside [dt_min, dt_max]");
  }
  return adaptive_attempt(H, state, dt, config);
}

double stability_dt_hint(const Operator& H, const std::optional<FrameBlock>& U0, double dt_max,
                         std::uint64_t seed) {
  double rho = 0.0;
  if (H.dense_representable()) {
    rho = std::max(std::abs(gershgorin_lower_bound(H)), std::abs(gershgorin_upper_bound(H)));
  } else {
    rho = 1.1 * estimate_spectral_radius(H, 20, seed);
  }
  double gram_scale = 1.0;
  if (U0 && U0->width() > 0) {
    gram_scale = std::max(1.0, symmetric_eigenvalues(gram(*U0).value).maxCoeff());
  }
  const double rate = rho * (1.0 + gram_scale);
  if (!(rate > 0.0)) return dt_max;
  return std::min(1.0 / rate, dt_max);
}

namespace {

SolverConfig effective_config(const Operator& H, const Matrix& U0, const SolverConfig& config) {
  SolverConfig c = config;
  if (c.scheme != Scheme::rk4_adaptive || !(c.stability_factor > 0.0)) return c;
  const double cap = c.stability_factor * stability_dt_hint(H, FrameBlock(U0), c.dt_max, c.seed);
  c.dt_max = std::max(std::min(c.dt_max, cap), c.dt_min);
  c.dt = std::min(c.dt, c.dt_max);
  return c;
}

}  // namespace

namespace {

bool within_unit_gram(const Matrix& U) {
  return symmetric_eigenvalues(gram(U).value).maxCoeff() <= 1.0 + 1e-10;
}

void annotate_spectral_gap(const Operator& H, Index width, Trajectory& traj) {
  if (!H.dense_representable() || H.dim() > 512 || width >= H.dim()) return;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(H.to_dense(), Eigen::EigenvaluesOnly);
  const Vector& ev = solver.eigenvalues();
  const double gap = ev(width) - ev(width - 1);
  traj.spectral_gap = gap;
  traj.degenerate_gap = gap < 1e-8 * std::abs(ev(0));
}

}  // namespace

Trajectory run_flow(const Operator& H, const FrameBlock& U0, const SolverConfig& user_config,
                    const StepHook& hook) {
  user_config.validate();
  if (H.dim() != U0.ambient_dim()) {
    throw Error(ErrorCode::dimension_mismatch, "operator and initial block dimensions differ");
  }
  const SolverConfig config = effective_config(H, U0.matrix(), user_config);
  if (config.check_admissibility) {
    const AdmissibilityReport report = admissible_initial(H, U0, config.admissibility);
    if (!report.ok) throw Error(ErrorCode::admissibility_failure, "inadmissible U0: " + report.reason);
  }

  Trajectory traj;
  FlowState state;
  state.U = U0.matrix();
  state.cached_HU = H.apply(state.U);
  state.apply_count = 1;

  DiagnosticsRecord rec = make_record(state.U, *state.cached_HU, 0.0, 0.0);
  const double energy0 = rec.energy;
  const bool started_orthonormal = rec.defect <= config.defect_tol;
  const bool energy_check_applies = config.enforce_energy_monotonicity &&
                                    config.scheme == Scheme::rk4_adaptive && config.rtol <= 1e-8;
  bool enforce_energy = energy_check_applies && within_unit_gram(state.U);
  double energy_prev = energy0;

  auto push = [&](const DiagnosticsRecord& r) {
    traj.samples.push_back(r);
    if (config.keep_frames) traj.frames.push_back(state.U);
  };
  auto converged = [&](const DiagnosticsRecord& r) {
    return r.grad_norm <= config.grad_tol && r.defect <= config.defect_tol;
  };
  auto converged_reason = [&] {
    return started_orthonormal ? StopReason::grad_converged : StopReason::defect_and_grad_converged;
  };

  push(rec);
  bool done = false;
  if (converged(rec)) {
    traj.stop_reason = converged_reason();
    done = true;
  } else if (state.t >= config.t_max) {
    traj.stop_reason = StopReason::t_max_reached;
    done = true;
  }

  double dt = config.dt;
  while (!done) {
    if (traj.accepted_steps >= config.max_steps) {
      if (traj.samples.back().t != state.t) push(rec);
      traj.stop_reason = StopReason::t_max_reached;
      break;
    }
    const double remaining = config.t_max - state.t;
    const double h = std::min(dt, remaining);

    double dt_used = h;
    if (config.scheme == Scheme::rk4_adaptive) {
      AdaptiveStep step;
      try {
        step = adaptive_attempt(H, state, h, config);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::step_underflow) throw;
        if (traj.samples.back().t != state.t) push(rec);
        traj.stop_reason = StopReason::step_underflow;
        break;
      }
      if (!step.accepted) {
        ++traj.rejected_steps;
        state.apply_count = step.state.apply_count;
        state.cached_HU = std::move(step.state.cached_HU);
        dt = step.dt_next;
        continue;
      }
      state = std::move(step.state);
      if (h == dt) dt = step.dt_next;
    } else {
      state = config.scheme == Scheme::euler ? step_euler(H, state, h) : step_rk4(H, state, h);
    }
    // Land exactly on t_max despite rounding in the accumulated time.
    if (h == remaining) state.t = config.t_max;
    ++traj.accepted_steps;

    state.cached_HU = H.apply(state.U);
    ++state.apply_count;

    if (hook && hook(state)) {
      state.cached_HU = H.apply(state.U);
      ++state.apply_count;
      enforce_energy = energy_check_applies && within_unit_gram(state.U);
      energy_prev = 0.5 * frobenius_inner(state.U, *state.cached_HU);
    }

    rec = make_record(state.U, *state.cached_HU, state.t, dt_used);
    if (!std::isfinite(rec.energy) || !std::isfinite(rec.grad_norm)) {
      throw Error(ErrorCode::non_finite_state, "non-finite diagnostics during the flow");
    }
    if (enforce_energy &&
        rec.energy > energy_prev + config.energy_slack * (1.0 + std::abs(energy_prev))) {
      std::ostringstream msg;
      msg.precision(17);
      msg << "energy increased from " << energy_prev << " to " << rec.energy << " at t = " << state.t;
      throw Error(ErrorCode::energy_increase, msg.str());
    }
    energy_prev = rec.energy;

    if (rec.energy - energy0 > config.divergence_factor * std::abs(energy0)) {
      push(rec);
      traj.stop_reason = StopReason::diverged;
      break;
    }
    const bool is_converged = converged(rec);
    const bool at_horizon = state.t >= config.t_max;
    if (is_converged || at_horizon || traj.accepted_steps % config.record_every == 0) push(rec);
    if (is_converged) {
      traj.stop_reason = converged_reason();
      done = true;
    } else if (at_horizon) {
      traj.stop_reason = StopReason::t_max_reached;
      done = true;
    }
  }

  traj.final_state = std::move(state);
  if (config.estimate_spectral_gap) annotate_spectral_gap(H, U0.width(), traj);
  return traj;
}

FlowState advance_to(const Operator& H, FlowState state, double t_target,
                     const SolverConfig& user_config) {
  user_config.validate();
  const SolverConfig config = effective_config(H, state.U, user_config);
  double dt = config.dt;
  while (state.t < t_target) {
    const double remaining = t_target - state.t;
    const double h = std::min(dt, remaining);
    if (config.scheme == Scheme::rk4_adaptive) {
      AdaptiveStep step = adaptive_attempt(H, state, h, config);
      if (!step.accepted) {
        state = std::move(step.state);
        dt = step.dt_next;
        continue;
      }
      state = std::move(step.state);
      if (h == dt) dt = step.dt_next;
    } else {
      state = config.scheme == Scheme::euler ? step_euler(H, state, h) : step_rk4(H, state, h);
    }
    if (h == remaining) state.t = t_target;
  }
  return state;
}

}  // namespace grassflow
