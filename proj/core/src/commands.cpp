#include "grassflow/commands.hpp"

#include <cmath>
#include <limits>
#include <fstream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "grassflow/diagnostics.hpp"
#include "grassflow/error.hpp"
#include "grassflow/experiment.hpp"
#include "grassflow/oracle.hpp"
#include "grassflow/trajectory_io.hpp"

namespace grassflow {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

struct Prepared {
  ExperimentConfig config;
  Operator H;
  FrameBlock U0;
};

Prepared prepare(const CommandOptions& options) {
  ExperimentConfig cfg = load_experiment_config(options.config);
  apply_environment_defaults(cfg);
  if (options.seed) {
    cfg.init.seed = *options.seed;
    cfg.solver.seed = *options.seed;
  }
  Operator H = build_operator(cfg);
  FrameBlock U0 = build_initial_block(cfg, H);
  return Prepared{std::move(cfg), std::move(H), std::move(U0)};
}

json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json to_json(const SolverConfig& c) {
  return json{
      {"scheme", std::string(scheme_name(c.scheme))},
      {"dt", c.dt},
      {"dt_min", c.dt_min},
      {"dt_max", c.dt_max},
      {"safety", c.safety},
      {"rtol", c.rtol},
      {"grad_tol", c.grad_tol},
      {"defect_tol", c.defect_tol},
      {"t_max", c.t_max},
      {"record_every", c.record_every},
      {"seed", c.seed},
      {"check_admissibility", c.check_admissibility},
      {"eps_adm", c.admissibility.eps_adm},
      {"eps_rank", c.admissibility.eps_rank},
      {"allow_semidefinite", c.admissibility.allow_semidefinite},
      {"enforce_energy_monotonicity", c.enforce_energy_monotonicity},
      {"energy_slack", c.energy_slack},
      {"divergence_factor", c.divergence_factor},
      {"max_steps", c.max_steps},
      {"stability_factor", c.stability_factor},
      {"gram_consistent", c.gram_consistent},
  };
}

json to_json(const EmpiricalConstants& c) {
  return json{{"c0", c.c0},
              {"gamma", c.gamma},
              {"K", c.K},
              {"r_squared", c.r_squared},
              {"already_converged", c.already_converged},
              {"window", {c.window.t_lo, c.window.t_hi}}};
}

json to_json(const DecayFit& f) {
  return json{{"rate", f.rate},
              {"intercept", f.intercept},
              {"prefactor", f.prefactor()},
              {"r_squared", f.r_squared},
              {"samples", f.samples},
              {"window", {f.window.t_lo, f.window.t_hi}}};
}

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error(ErrorCode::io_error, "write to " + path.string() + " failed");
}

void emit(const json& doc, const fs::path& path, const CommandOptions& options, std::ostream& out) {
  const std::string text = doc.dump(2) + "\n";
  write_text(path, text);
  if (!options.quiet) out << text;
}

void report_error(std::ostream& err, std::string_view code, const std::string& message) {
  err << json{{"error_code", code}, {"message", message}}.dump() << "\n";
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    report_error(err, error_code_name(e.code()), e.what());
  } catch (const std::exception& e) {
    report_error(err, "INTERNAL", e.what());
  }
  return kExitError;
}

bool converged(StopReason r) {
  return r == StopReason::grad_converged || r == StopReason::defect_and_grad_converged;
}

std::optional<EmpiricalConstants> try_constants(const Trajectory& traj) {
  if (traj.samples.size() < 10) return std::nullopt;
  try {
    return empirical_constants(traj);
  } catch (const Error&) {
    return std::nullopt;
  }
}

void require_dense(const Operator& H, const std::string& what) {
  if (!H.dense_representable()) {
    throw Error(ErrorCode::check_needs_dense, what + " needs a dense-representable operator");
  }
}

json run_check(const std::string& name, const Prepared& p, const Trajectory& traj,
               const Matrix* dense, const EigenDecomposition* eig) {
  const SolverConfig& sc = p.config.solver;
  const Index N = p.config.N;
  json c{{"name", name}};

  if (name == "defect_bound") {
    const DefectBoundVerdict v = check_defect_bound(traj);
    const double final_defect = traj.samples.back().defect;
    c["pass"] = v.pass && v.monotone;
    c["measured"] = {{"defect0", v.defect0},
                     {"final_defect", final_defect},
                     {"c0_min", v.c0_min},
                     {"violations", v.violations},
                     {"worst_ratio", v.worst_ratio},
                     {"monotone", v.monotone},
                     {"fitted_rate", v.fitted_rate},
                     {"rate_ratio", v.rate_ratio}};
    c["tolerances"] = {{"relative_slack", 1e-6}, {"rounding_floor", v.floor}, {"monotone_slack", 1e-10}};
  } else if (name == "energy_gap") {
    std::vector<double> lambda(eig->eigenvalues.data(), eig->eigenvalues.data() + N);
    std::optional<double> next;
    if (N < eig->eigenvalues.size()) next = eig->eigenvalues(N);
    const EnergyGapVerdict v = energy_gap_check(traj, SpectrumSlice(lambda, next));
    c["pass"] = v.pass;
    c["measured"] = {{"minimum_energy", v.minimum_energy},
                     {"min_gap", v.min_gap},
                     {"max_increase", v.max_increase},
                     {"final_gap", v.final_gap},
                     {"bound", v.bound},
                     {"nonnegative", v.nonnegative},
                     {"monotone", v.monotone},
                     {"within_bound", v.within_bound}};
    c["tolerances"] = {{"slack", 1e-10}, {"safety", 10.0}};
  } else if (name == "projector_residuals") {
    const ProjectorResiduals r = projector_residuals(*dense, traj.final_state.U);
    c["pass"] = r.r_eq <= 1e-8 && r.r_idem <= 1e-8;
    c["measured"] = {{"r_eq", r.r_eq}, {"r_idem", r.r_idem}};
    c["tolerances"] = {{"r_eq", 1e-8}, {"r_idem", 1e-8}};
  } else if (name == "gram_corridor") {
    const GramCorridorVerdict v = check_gram_corridor(traj);
    c["pass"] = v.pass;
    c["measured"] = {{"regime", v.regime},
                     {"beta", v.beta},
                     {"max_order_violation", v.max_order_violation},
                     {"max_bound_violation", v.max_bound_violation}};
    c["tolerances"] = {{"slack", 1e-8}};
  } else if (name == "psd_probe") {
    json probes = json::array();
    bool pass = true;
    for (const double t : {0.1, 1.0, 10.0}) {
      const double v = psd_probe_normalized(*dense, p.U0.matrix(), 2.0, t);
      pass = pass && v >= -1e-9;
      probes.push_back({{"t", t}, {"normalized_lambda_min", v}});
    }
    c["pass"] = pass;
    c["measured"] = {{"probes", probes}};
    c["tolerances"] = {{"lambda_min", -1e-9}, {"k", 2.0}};
  } else if (name == "gradient_decay") {
    const GradientDecayVerdict v = check_gradient_decay(traj, sc.grad_tol);
    c["pass"] = v.pass;
    c["measured"] = {{"final_grad", v.final_grad}, {"constants", to_json(v.constants)}};
    c["tolerances"] = {{"grad_tol", sc.grad_tol}, {"min_r_squared", 0.95}};
  } else if (name == "distance_bound") {
    const DistanceBoundVerdict v = check_distance_bound(traj, eig->eigenvectors.leftCols(N));
    c["pass"] = v.pass;
    c["measured"] = {{"checked", v.checked}, {"worst_ratio", v.worst_ratio}};
    c["tolerances"] = {{"safety", 10.0}};
  } else if (name == "perturbation") {
    const double t_inject = 0.5 * traj.samples.back().t;
    SolverConfig pc = sc;
    pc.keep_frames = false;
    const PerturbationReport r = perturb_and_recover(p.H, p.U0, pc, t_inject, 1e-6, sc.seed + 1);
    c["pass"] = r.pass;
    c["measured"] = {{"injected", r.injected},
                     {"t_injected", r.t_injected},
                     {"defect_before", r.defect_before},
                     {"defect_after", r.defect_after},
                     {"admissibility_lost", r.admissibility_lost},
                     {"recovered", r.recovered},
                     {"recovery_time", r.recovery_time},
                     {"ritz_max_rel_diff", r.ritz_max_rel_diff},
                     {"post_fit", r.post_fit ? to_json(*r.post_fit) : json(nullptr)}};
    c["tolerances"] = {{"magnitude", 1e-6}, {"defect_tol", sc.defect_tol}, {"ritz_rel", 1e-6}};
  }
  return c;
}

}  // namespace

int run_solve(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Prepared p = prepare(options);
    const Trajectory traj = run_flow(p.H, p.U0, p.config.solver);
    fs::create_directories(options.out_dir);
    const fs::path traj_path = options.out_dir / p.config.outputs.trajectory;
    save_trajectory_csv(traj_path, traj.samples, p.config.N);

    const auto& last = traj.samples.back();
    const auto constants = try_constants(traj);
    json summary{
        {"command", "solve"},
        {"version", kVersion},
        {"stop_reason", std::string(stop_reason_name(traj.stop_reason))},
        {"converged", converged(traj.stop_reason)},
        {"t_final", last.t},
        {"accepted_steps", traj.accepted_steps},
        {"rejected_steps", traj.rejected_steps},
        {"operator_applications", traj.final_state.apply_count},
        {"samples", traj.samples.size()},
        {"shift", p.H.shift()},
        {"final",
         {{"energy", last.energy},
          {"grad_norm", last.grad_norm},
          {"defect", last.defect},
          {"gram_eigs", to_json(last.gram_eigs)},
          {"ritz_values", to_json(last.ritz_values)},
          {"ritz_values_unshifted", to_json((last.ritz_values.array() + p.H.shift()).matrix())}}},
        {"spectral_gap", nullable(traj.spectral_gap)},
        {"degenerate_gap", traj.degenerate_gap},
        {"empirical_constants", constants ? to_json(*constants) : json(nullptr)},
        {"defaults", {{"solver", to_json(p.config.solver)}, {"init_seed", p.config.init.seed}, {"compare_tol", p.config.compare_tol}}},
        {"trajectory", traj_path.string()},
    };
    emit(summary, options.out_dir / p.config.outputs.summary, options, out);

    if (converged(traj.stop_reason)) return kExitOk;
    if (traj.stop_reason == StopReason::t_max_reached) return kExitTimeLimit;
    report_error(err, traj.stop_reason == StopReason::step_underflow ? "STEP_UNDERFLOW" : "DIVERGED",
                 "flow stopped: " + std::string(stop_reason_name(traj.stop_reason)));
    return kExitError;
  });
}

int run_validate(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Prepared p = prepare(options);
    fs::create_directories(options.out_dir);
    json report{{"command", "validate"}, {"version", kVersion}, {"checks", json::array()}, {"pass", true}};
    if (p.config.checks.empty()) {
      emit(report, options.out_dir / p.config.outputs.report, options, out);
      return kExitOk;
    }

    bool want_dense = false;
    bool want_eig = false;
    bool want_frames = false;
    for (const auto& name : p.config.checks) {
      if (name == "projector_residuals" || name == "psd_probe") want_dense = true;
      if (name == "energy_gap" || name == "distance_bound") want_eig = true;
      if (name == "distance_bound") want_frames = true;
    }
    if (want_dense || want_eig) {
      for (const auto& name : p.config.checks) {
        if (name == "projector_residuals" || name == "psd_probe" || name == "energy_gap" ||
            name == "distance_bound") {
          require_dense(p.H, "check '" + name + "'");
        }
      }
    }

    SolverConfig sc = p.config.solver;
    sc.keep_frames = want_frames;
    const Trajectory traj = run_flow(p.H, p.U0, sc);

    std::optional<Matrix> dense;
    std::optional<EigenDecomposition> eig;
    if (want_dense || want_eig) dense = p.H.to_dense();
    if (want_eig) eig = jacobi_eigensolver(*dense);

    bool all = true;
    for (const auto& name : p.config.checks) {
      json c = run_check(name, p, traj, dense ? &*dense : nullptr, eig ? &*eig : nullptr);
      all = all && c["pass"].get<bool>();
      report["checks"].push_back(std::move(c));
    }
    report["pass"] = all;
    report["stop_reason"] = std::string(stop_reason_name(traj.stop_reason));
    emit(report, options.out_dir / p.config.outputs.report, options, out);
    return all ? kExitOk : kExitCheckFailed;
  });
}

int run_compare_oracle(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const Prepared p = prepare(options);
    require_dense(p.H, "compare-oracle");
    const Trajectory traj = run_flow(p.H, p.U0, p.config.solver);
    const EigenDecomposition eig = jacobi_eigensolver(p.H.to_dense());
    const Index N = p.config.N;

    const Vector& ritz = traj.samples.back().ritz_values;
    const Vector lambda = eig.eigenvalues.head(N);
    double err_max = 0.0;
    for (Index i = 0; i < N; ++i) {
      const double scale = std::max(std::abs(lambda(i)), std::numeric_limits<double>::min());
      err_max = std::max(err_max, std::abs(ritz(i) - lambda(i)) / scale);
    }
    const double dist = subspace_distance(traj.final_state.U, eig.eigenvectors.leftCols(N));
    std::optional<double> gap;
    if (N < eig.eigenvalues.size()) gap = eig.eigenvalues(N) - eig.eigenvalues(N - 1);
    const bool pass = err_max <= p.config.compare_tol;

    fs::create_directories(options.out_dir);
    json doc{{"command", "compare-oracle"},
             {"version", kVersion},
             {"stop_reason", std::string(stop_reason_name(traj.stop_reason))},
             {"ritz_values", to_json(ritz)},
             {"oracle_eigenvalues", to_json(lambda)},
             {"shift", p.H.shift()},
             {"max_rel_ritz_error", err_max},
             {"subspace_distance", dist},
             {"spectral_gap", nullable(gap)},
             {"tol", p.config.compare_tol},
             {"pass", pass}};
    emit(doc, options.out_dir / "compare_oracle.json", options, out);
    return pass ? kExitOk : kExitCheckFailed;
  });
}

int run_export_plotdata(const CommandOptions& options, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const TrajectoryTable table = load_trajectory_csv(options.trajectory);
    fs::create_directories(options.out_dir);

    std::vector<double> ts;
    for (const auto& s : table.samples) ts.push_back(s.t);
    const double t_mid = ts.empty() ? 0.0 : 0.5 * (ts.front() + ts.back());

    json fits{{"source", options.trajectory.string()},
              {"rows", table.samples.size()},
              {"quantities", json::object()}};
    for (std::size_t col = 1; col < table.columns.size(); ++col) {
      const std::string& name = table.columns[col];
      std::string lin, lg;
      std::vector<double> ft, fv;
      std::size_t omitted = 0;
      for (std::size_t row = 0; row < table.cells.size(); ++row) {
        const std::string& t_text = table.cells[row][0];
        const std::string& v_text = table.cells[row][col];
        lin += t_text + " " + v_text + "\n";
        const double v = std::stod(v_text);
        if (v > 0.0 && std::isfinite(v)) {
          lg += t_text + " " + format_double(std::log10(v)) + "\n";
          if (ts[row] >= t_mid) {
            ft.push_back(ts[row]);
            fv.push_back(v);
          }
        } else {
          ++omitted;
        }
      }
      write_text(options.out_dir / (name + ".dat"), lin);
      write_text(options.out_dir / (name + ".log10.dat"), lg);

      json q{{"rows", table.cells.size()}, {"log_rows", table.cells.size() - omitted}, {"omitted_nonpositive", omitted}};
      try {
        q["fit"] = to_json(fit_exponential_decay(ft, fv));
      } catch (const Error& e) {
        q["fit"] = nullptr;
        q["fit_error"] = e.what();
      }
      fits["quantities"][name] = std::move(q);
    }
    const std::string text = fits.dump(2) + "\n";
    write_text(options.out_dir / "fits.json", text);
    if (!options.quiet) out << text;
    return kExitOk;
  });
}

}  // namespace grassflow
