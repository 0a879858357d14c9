#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "grassflow/integrators.hpp"

namespace grassflow {

struct BuilderSpec {
  // laplacian_1d, laplacian_1d_matrix_free, schrodinger_1d, dense, diagonal
  std::string name;
  Index m = 0;
  double length = 1.0;
  double omega = 1.0;
  Matrix matrix;   // dense
  Vector values;   // diagonal
};

struct MatrixMarketSpec {
  std::filesystem::path path;
};

struct AutoGershgorin {};

enum class InitKind { sub_stiefel, stiefel, super_stiefel, eigenbasis, explicit_block };

struct InitSpec {
  InitKind kind = InitKind::sub_stiefel;
  std::uint64_t seed = 0;
  Matrix block;  // explicit_block only
};

struct OutputSpec {
  std::string trajectory = "trajectory.csv";
  std::string summary = "summary.json";
  std::string report = "report.json";
};

struct ExperimentConfig {
  std::variant<BuilderSpec, MatrixMarketSpec> op;
  std::variant<AutoGershgorin, double> shift = 0.0;
  Index N = 0;
  InitSpec init;
  SolverConfig solver;
  bool solver_grad_tol_explicit = false;
  OutputSpec outputs;
  std::vector<std::string> checks;
  double compare_tol = 1e-8;
};

/// Names accepted in "checks".
const std::vector<std::string>& known_checks();

/// Parses the JSON config. Relative input paths resolve against base_dir and
/// must exist. Throws ConfigMissingField / ConfigInvalid.
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::filesystem::path& base_dir = ".");
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Applies GRASSFLOW_DEFAULT_TOL when the config leaves grad_tol unset.
void apply_environment_defaults(ExperimentConfig& config);

/// Builds the operator and applies the shift.
Operator build_operator(const ExperimentConfig& config);

/// Initial block for config.init on the shifted operator.
FrameBlock build_initial_block(const ExperimentConfig& config, const Operator& H);

}  // namespace grassflow
