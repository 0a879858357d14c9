#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "grassflow/record.hpp"

namespace grassflow {

/// Column names: t,energy,grad_norm,defect,dt_used,gram_eig_1..N,ritz_1..N,c0_emp
std::vector<std::string> trajectory_columns(Index width);

/// %.17g, which round-trips every finite double.
std::string format_double(double value);

/// One header line plus one row per sample, '\n' line endings.
void write_trajectory_csv(std::ostream& out, const std::vector<DiagnosticsRecord>& samples,
                          Index width);
void save_trajectory_csv(const std::filesystem::path& path,
                         const std::vector<DiagnosticsRecord>& samples, Index width);

/// Parsed file, keeping the textual fields so exported values can be copied
/// verbatim.
struct TrajectoryTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> cells;  // row-major text
  std::vector<DiagnosticsRecord> samples;
  Index width = 0;
};

/// Throws ParseError ("source: line L, col C: ...") on a malformed header,
/// a wrong field count or a non-numeric field.
TrajectoryTable read_trajectory_csv(std::istream& in, const std::string& source = "<stream>");
TrajectoryTable load_trajectory_csv(const std::filesystem::path& path);

}  // namespace grassflow
