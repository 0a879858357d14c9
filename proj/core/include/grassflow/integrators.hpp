#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include "grassflow/flow_core.hpp"
#include "grassflow/record.hpp"

namespace grassflow {

enum class Scheme { euler, rk4, rk4_adaptive };

enum class StopReason {
  grad_converged,             // gradient small and U0 was already orthonormal
  defect_and_grad_converged,  // gradient and orthogonality defect both small
  t_max_reached,
  step_underflow,
  diverged,
};

std::string_view scheme_name(Scheme scheme) noexcept;
std::optional<Scheme> parse_scheme(std::string_view name) noexcept;
std::string_view stop_reason_name(StopReason reason) noexcept;

struct SolverConfig {
  Scheme scheme = Scheme::rk4_adaptive;
  double dt = 1e-3;
  double dt_min = 1e-12;
  double dt_max = 1.0;
  double safety = 0.9;
  double rtol = 1e-8;
  double grad_tol = 1e-8;
  double defect_tol = 1e-10;
  double t_max = 100.0;
  int record_every = 1;
  std::uint64_t seed = 0;

  bool check_admissibility = true;
  AdmissibilityOptions admissibility{};

  // Fail the run on an energy increase beyond energy_slack * (1 + |E|) across
  // an accepted step. Only enforced for rk4_adaptive with rtol <= 1e-8 and
  // while U^T U <= I, where the continuous flow is energy diminishing.
  bool enforce_energy_monotonicity = true;
  double energy_slack = 1e-10;

  // Stop as diverged once E(U) - E(U0) > divergence_factor * |E(U0)|.
  double divergence_factor = 1e3;

  // rk4-adaptive only: dt_max is lowered to stability_factor times
  // stability_dt_hint(H, U0). The step-doubling estimate cannot see the
  // instability of modes whose amplitude has already decayed to rounding
  // level, so without a cap it grows dt past the RK4 stability interval
  // (about 2.78 / rate). <= 0 disables the cap.
  double stability_factor = 2.0;

  // rk4-adaptive only: take gram-consistent RK4 steps (see
  // step_rk4_gram_consistent) instead of classical ones.
  bool gram_consistent = true;

  bool keep_frames = false;
  bool estimate_spectral_gap = true;
  std::int64_t max_steps = 50'000'000;

  /// Throws InvalidArgument unless 0 < dt_min <= dt <= dt_max, tolerances
  /// are positive, safety lies in (0, 1], t_max >= 0 and record_every >= 1.
  void validate() const;
};

struct FlowState {
  double t = 0.0;
  Matrix U;
  std::optional<Matrix> cached_HU;  // H U at the current U, when known
  std::int64_t step_count = 0;
  std::int64_t apply_count = 0;     // operator applications so far
};

struct Trajectory {
  std::vector<DiagnosticsRecord> samples;
  std::vector<Matrix> frames;  // U at each sample, when keep_frames is set
  FlowState final_state;
  StopReason stop_reason = StopReason::t_max_reached;
  std::int64_t accepted_steps = 0;
  std::int64_t rejected_steps = 0;
  std::optional<double> spectral_gap;  // lambda_{N+1} - lambda_N, when computed
  bool degenerate_gap = false;         // gap < 1e-8 |lambda_1|
};

/// U <- U - dt (H U - U U^T H U). dt = 0 returns the state unchanged.
FlowState step_euler(const Operator& H, const FlowState& state, double dt);

/// Classical four-stage Runge-Kutta step of the same ODE.
FlowState step_rk4(const Operator& H, const FlowState& state, double dt);

/// Classical RK4 step followed by a right multiplication U <- U S with
/// S = G^{-1/2} (I - D)^{1/2}, where G = U^T U after the step and D is the
/// same RK4 stage scheme applied to the defect law
/// dD/dt = D R + R D (D = I - U^T U, R = U^T H U at each stage).
/// span(U) is unchanged; only the Gram matrix is moved, by an amount of the
/// order of the local truncation error, so the discrete defect obeys the
/// homogeneous law: it stays exactly zero from an orthonormal start and
/// decays like the continuous defect otherwise. The correction is skipped
/// when I - D is not positive definite.
FlowState step_rk4_gram_consistent(const Operator& H, const FlowState& state, double dt);

struct AdaptiveStep {
  FlowState state;  // advanced state if accepted, otherwise the input state
  double dt_next = 0.0;
  bool accepted = false;
  double error_estimate = 0.0;
};

/// Step doubling: one RK4 step (gram-consistent unless disabled in config) of size dt against two of size dt/2,
/// err = ||U_full - U_half||_F / (1 + ||U||_F). Accepted iff err <= rtol; the
/// two-half-step result is kept. dt_next = clamp(safety dt (rtol/err)^(1/5)).
/// Throws StepUnderflow when a rejection happens at dt_min.
AdaptiveStep step_rk4_adaptive(const Operator& H, const FlowState& state, double dt,
                               const SolverConfig& config);

/// 1 / rate, with rate = rho (1 + max(1, lambda_max(U0^T U0))) an upper
/// estimate of the fastest decay rate of the linearized flow (2 rho without
/// U0). rho bounds the spectral radius of H: Gershgorin for assembled
/// operators, 1.1 times 20 seeded power iterations otherwise. Capped at
/// dt_max.
double stability_dt_hint(const Operator& H, const std::optional<FrameBlock>& U0 = std::nullopt,
                         double dt_max = std::numeric_limits<double>::infinity(),
                         std::uint64_t seed = 0);

/// Called after every accepted step; may modify the state in place and
/// must return true if it did.
using StepHook = std::function<bool(FlowState&)>;

/// Integrates dU/dt = -(HU - U U^T H U) from U0 until the gradient norm is
/// <= grad_tol and the orthogonality defect is <= defect_tol, or t reaches
/// t_max. Records the initial state, every record_every accepted steps and the
/// final state. Deterministic for identical inputs.
Trajectory run_flow(const Operator& H, const FrameBlock& U0, const SolverConfig& config,
                    const StepHook& hook = {});

/// Integrates to exactly t_target with the configured scheme, ignoring the
/// stopping rules.
FlowState advance_to(const Operator& H, FlowState state, double t_target,
                     const SolverConfig& config);

}  // namespace grassflow
