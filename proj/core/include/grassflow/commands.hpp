#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>

namespace grassflow {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitTimeLimit = 2;
inline constexpr int kExitCheckFailed = 3;

inline constexpr const char* kVersion = "0.1.0";

struct CommandOptions {
  std::filesystem::path config;      // solve, validate, compare-oracle
  std::filesystem::path trajectory;  // export-plotdata
  std::filesystem::path out_dir = ".";
  std::optional<std::uint64_t> seed;  // overrides init.seed and solver.seed
  bool quiet = false;
};

// Each command prints its JSON result to `out` (unless quiet) and writes
// files under out_dir. Errors go to `err` as {"error_code": ..., "message": ...}
// with exit code 1.

/// 0 converged, 2 stopped at t_max, 1 otherwise.
int run_solve(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// 0 iff every configured check passes, 3 if any fails.
int run_validate(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// 0 iff the max relative Ritz error against the Jacobi reference is within
/// compare_tol, 3 otherwise.
int run_compare_oracle(const CommandOptions& options, std::ostream& out, std::ostream& err);

/// <q>.dat and <q>.log10.dat per column plus fits.json.
int run_export_plotdata(const CommandOptions& options, std::ostream& out, std::ostream& err);

}  // namespace grassflow
