#include "grassflow/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "grassflow/error.hpp"
#include "grassflow/matrix_market.hpp"
#include "grassflow/oracle.hpp"

namespace grassflow {

namespace {

using json = nlohmann::json;

[[noreturn]] void missing(const std::string& field) {
  throw Error(ErrorCode::config_missing_field, "config: missing required field '" + field + "'");
}

[[noreturn]] void invalid(const std::string& field, const std::string& what) {
  throw Error(ErrorCode::config_invalid, "config: field '" + field + "': " + what);
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
  const auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) missing(path);
  return *it;
}

double get_number(const json& v, const std::string& path) {
  if (!v.is_number()) invalid(path, "expected a number");
  return v.get<double>();
}

std::int64_t get_integer(const json& v, const std::string& path) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) invalid(path, "expected an integer");
  return v.get<std::int64_t>();
}

std::uint64_t get_seed(const json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0) {
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  }
  invalid(path, "expected a nonnegative integer");
}

bool get_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) invalid(path, "expected true or false");
  return v.get<bool>();
}

std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) invalid(path, "expected a string");
  return v.get<std::string>();
}

Matrix get_matrix(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) invalid(path, "expected a nonempty array of rows");
  const auto rows = static_cast<Index>(v.size());
  if (!v[0].is_array() || v[0].empty()) invalid(path, "expected a nonempty array of rows");
  const auto cols = static_cast<Index>(v[0].size());
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const json& row = v[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Index>(row.size()) != cols) invalid(path, "ragged rows");
    for (Index j = 0; j < cols; ++j) {
      M(i, j) = get_number(row[static_cast<std::size_t>(j)], path);
    }
  }
  return M;
}

Vector get_vector(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) invalid(path, "expected a nonempty array");
  Vector out(static_cast<Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Index>(i)) = get_number(v[i], path);
  return out;
}

BuilderSpec parse_builder(const json& op) {
  BuilderSpec b;
  b.name = get_string(op["builder"], "operator.builder");
  if (b.name == "laplacian_1d" || b.name == "laplacian_1d_matrix_free" || b.name == "schrodinger_1d") {
    const auto m = get_integer(require(op, "m", "operator.m"), "operator.m");
    if (m < 2) invalid("operator.m", "must be >= 2");
    b.m = static_cast<Index>(m);
    if (op.contains("length")) b.length = get_number(op["length"], "operator.length");
    if (!(b.length > 0.0)) invalid("operator.length", "must be positive");
    if (b.name == "schrodinger_1d" && op.contains("omega")) {
      b.omega = get_number(op["omega"], "operator.omega");
    }
  } else if (b.name == "dense") {
    b.matrix = get_matrix(require(op, "matrix", "operator.matrix"), "operator.matrix");
  } else if (b.name == "diagonal") {
    b.values = get_vector(require(op, "values", "operator.values"), "operator.values");
  } else {
    invalid("operator.builder", "unknown builder '" + b.name + "'");
  }
  return b;
}

void parse_solver(const json& s, ExperimentConfig& cfg) {
  if (!s.is_object()) invalid("solver", "expected an object");
  SolverConfig& c = cfg.solver;
  for (const auto& [key, v] : s.items()) {
    const std::string path = "solver." + key;
    if (key == "scheme") {
      const auto scheme = parse_scheme(get_string(v, path));
      if (!scheme) invalid(path, "expected euler, rk4 or rk4-adaptive");
      c.scheme = *scheme;
    } else if (key == "dt") {
      c.dt = get_number(v, path);
    } else if (key == "dt_min") {
      c.dt_min = get_number(v, path);
    } else if (key == "dt_max") {
      c.dt_max = get_number(v, path);
    } else if (key == "safety") {
      c.safety = get_number(v, path);
    } else if (key == "rtol") {
      c.rtol = get_number(v, path);
    } else if (key == "grad_tol") {
      c.grad_tol = get_number(v, path);
      cfg.solver_grad_tol_explicit = true;
    } else if (key == "defect_tol") {
      c.defect_tol = get_number(v, path);
    } else if (key == "t_max") {
      c.t_max = get_number(v, path);
    } else if (key == "record_every") {
      const auto r = get_integer(v, path);
      if (r < 1) invalid(path, "must be >= 1");
      c.record_every = static_cast<int>(r);
    } else if (key == "seed") {
      c.seed = get_seed(v, path);
    } else if (key == "check_admissibility") {
      c.check_admissibility = get_bool(v, path);
    } else if (key == "eps_adm") {
      c.admissibility.eps_adm = get_number(v, path);
    } else if (key == "eps_rank") {
      c.admissibility.eps_rank = get_number(v, path);
    } else if (key == "allow_semidefinite") {
      c.admissibility.allow_semidefinite = get_bool(v, path);
    } else if (key == "enforce_energy_monotonicity") {
      c.enforce_energy_monotonicity = get_bool(v, path);
    } else if (key == "energy_slack") {
      c.energy_slack = get_number(v, path);
    } else if (key == "divergence_factor") {
      c.divergence_factor = get_number(v, path);
    } else if (key == "stability_factor") {
      c.stability_factor = get_number(v, path);
    } else if (key == "gram_consistent") {
      c.gram_consistent = get_bool(v, path);
    } else if (key == "max_steps") {
      c.max_steps = get_integer(v, path);
    } else {
      invalid(path, "unknown solver option");
    }
  }
  // dt defaults may conflict with a user-lowered dt_max.
  if (!s.contains("dt") && c.dt > c.dt_max) c.dt = c.dt_max;
  try {
    c.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::config_invalid, std::string("config: solver: ") + e.what());
  }
}

}  // namespace

const std::vector<std::string>& known_checks() {
  static const std::vector<std::string> names = {
      "defect_bound", "energy_gap",     "projector_residuals", "gram_corridor",
      "psd_probe",    "gradient_decay", "distance_bound",      "perturbation",
  };
  return names;
}

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse_error, std::string("config: ") + e.what());
  }
  if (!root.is_object()) invalid("<root>", "expected a JSON object");

  ExperimentConfig cfg;

  const json& op = require(root, "operator", "operator");
  if (!op.is_object()) invalid("operator", "expected an object");
  if (op.contains("matrixmarket")) {
    std::filesystem::path p = get_string(op["matrixmarket"], "operator.matrixmarket");
    if (p.is_relative()) p = base_dir / p;
    if (!std::filesystem::exists(p)) invalid("operator.matrixmarket", "file " + p.string() + " does not exist");
    cfg.op = MatrixMarketSpec{p};
  } else if (op.contains("builder")) {
    cfg.op = parse_builder(op);
  } else {
    missing("operator.builder");
  }

  if (root.contains("shift")) {
    const json& s = root["shift"];
    if (s.is_string()) {
      if (s.get<std::string>() != "auto-gershgorin") invalid("shift", "expected \"auto-gershgorin\" or a number");
      cfg.shift = AutoGershgorin{};
    } else {
      cfg.shift = get_number(s, "shift");
    }
  }

  const auto N = get_integer(require(root, "N", "N"), "N");
  if (N < 1) invalid("N", "must be >= 1");
  cfg.N = static_cast<Index>(N);

  if (root.contains("init")) {
    const json& init = root["init"];
    if (!init.is_object()) invalid("init", "expected an object");
    if (init.contains("mode")) {
      const std::string mode = get_string(init["mode"], "init.mode");
      if (mode == "sub-stiefel") {
        cfg.init.kind = InitKind::sub_stiefel;
      } else if (mode == "stiefel") {
        cfg.init.kind = InitKind::stiefel;
      } else if (mode == "super-stiefel") {
        cfg.init.kind = InitKind::super_stiefel;
      } else if (mode == "eigenbasis") {
        cfg.init.kind = InitKind::eigenbasis;
      } else if (mode == "explicit") {
        cfg.init.kind = InitKind::explicit_block;
        cfg.init.block = get_matrix(require(init, "block", "init.block"), "init.block");
        if (cfg.init.block.cols() != cfg.N) invalid("init.block", "must have N columns");
      } else {
        invalid("init.mode", "unknown mode '" + mode + "'");
      }
    }
    if (init.contains("seed")) cfg.init.seed = get_seed(init["seed"], "init.seed");
  }

  if (root.contains("solver")) parse_solver(root["solver"], cfg);

  if (root.contains("outputs")) {
    const json& o = root["outputs"];
    if (!o.is_object()) invalid("outputs", "expected an object");
    if (o.contains("trajectory")) cfg.outputs.trajectory = get_string(o["trajectory"], "outputs.trajectory");
    if (o.contains("summary")) cfg.outputs.summary = get_string(o["summary"], "outputs.summary");
    if (o.contains("report")) cfg.outputs.report = get_string(o["report"], "outputs.report");
  }

  if (root.contains("checks")) {
    const json& c = root["checks"];
    if (!c.is_array()) invalid("checks", "expected an array of names");
    for (const auto& item : c) {
      const std::string name = get_string(item, "checks");
      bool known = false;
      for (const auto& k : known_checks()) known = known || k == name;
      if (!known) invalid("checks", "unknown check '" + name + "'");
      cfg.checks.push_back(name);
    }
  }

  if (root.contains("compare_tol")) {
    cfg.compare_tol = get_number(root["compare_tol"], "compare_tol");
    if (!(cfg.compare_tol > 0.0)) invalid("compare_tol", "must be positive");
  }
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  auto base = path.parent_path();
  if (base.empty()) base = ".";
  return parse_experiment_config(text.str(), base);
}

void apply_environment_defaults(ExperimentConfig& config) {
  if (config.solver_grad_tol_explicit) return;
  const char* env = std::getenv("GRASSFLOW_DEFAULT_TOL");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const double tol = std::strtod(env, &end);
  if (end == env || *end != '\0' || !(tol > 0.0)) {
    throw Error(ErrorCode::config_invalid,
                std::string("GRASSFLOW_DEFAULT_TOL must be a positive number, got '") + env + "'");
  }
  config.solver.grad_tol = tol;
}

Operator build_operator(const ExperimentConfig& config) {
  Operator op = std::visit(
      [](const auto& spec) -> Operator {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, MatrixMarketSpec>) {
          return load_matrixmarket(spec.path);
        } else {
          if (spec.name == "laplacian_1d") return build_laplacian_1d(spec.m, spec.length);
          if (spec.name == "laplacian_1d_matrix_free") {
            return build_laplacian_1d_matrix_free(spec.m, spec.length);
          }
          if (spec.name == "schrodinger_1d") return build_schrodinger_1d(spec.m, spec.length, spec.omega);
          if (spec.name == "dense") return build_dense(spec.matrix);
          Vector off = Vector::Zero(std::max<Index>(spec.values.size() - 1, 0));
          return build_tridiagonal(spec.values, off);
        }
      },
      config.op);

  if (config.N > op.dim()) {
    invalid("N", "block width " + std::to_string(config.N) + " exceeds dimension " +
                     std::to_string(op.dim()));
  }
  const double s = std::holds_alternative<AutoGershgorin>(config.shift) ? default_shift(op)
                                                                        : std::get<double>(config.shift);
  return s == 0.0 ? op : shift_operator(op, s);
}

FrameBlock build_initial_block(const ExperimentConfig& config, const Operator& H) {
  switch (config.init.kind) {
    case InitKind::sub_stiefel:
      return random_admissible_initial(H, config.N, config.init.seed, InitMode::sub_stiefel);
    case InitKind::stiefel:
      return random_admissible_initial(H, config.N, config.init.seed, InitMode::stiefel);
    case InitKind::super_stiefel:
      return random_admissible_initial(H, config.N, config.init.seed, InitMode::super_stiefel);
    case InitKind::eigenbasis: {
      if (!H.dense_representable()) {
        throw Error(ErrorCode::check_needs_dense, "init.mode eigenbasis needs a dense-representable operator");
      }
      const EigenDecomposition eig = jacobi_eigensolver(H.to_dense());
      return FrameBlock(eig.eigenvectors.leftCols(config.N));
    }
    case InitKind::explicit_block:
      if (config.init.block.rows() != H.dim()) {
        invalid("init.block", "must have " + std::to_string(H.dim()) + " rows");
      }
      return FrameBlock(config.init.block);
  }
  throw Error(ErrorCode::config_invalid, "config: unhandled init mode");
}

}  // namespace grassflow
