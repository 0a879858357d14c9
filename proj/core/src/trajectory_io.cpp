#include "grassflow/trajectory_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "grassflow/error.hpp"

namespace grassflow {

namespace {

[[noreturn]] void parse_fail(const std::string& source, std::size_t line, std::size_t col,
                             const std::string& what) {
  throw Error(ErrorCode::parse_error, source + ": line " + std::to_string(line) + ", col " +
                                          std::to_string(col) + ": " + what);
}

std::vector<std::pair<std::string, std::size_t>> split_commas(const std::string& line) {
  std::vector<std::pair<std::string, std::size_t>> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma - start), start + 1);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_field(const std::string& text, const std::string& source, std::size_t line,
                   std::size_t col) {
  // from_chars accepts the nan/inf spellings printf produces.
  double value = 0.0;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (text.empty() || ec != std::errc() || ptr != last) {
    parse_fail(source, line, col, "expected a number, got '" + text + "'");
  }
  return value;
}

}  // namespace

std::vector<std::string> trajectory_columns(Index width) {
  std::vector<std::string> cols = {"t", "energy", "grad_norm", "defect", "dt_used"};
  for (Index i = 1; i <= width; ++i) cols.push_back("gram_eig_" + std::to_string(i));
  for (Index i = 1; i <= width; ++i) cols.push_back("ritz_" + std::to_string(i));
  cols.push_back("c0_emp");
  return cols;
}

std::string format_double(double value) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", value);
  return std::string(buf, static_cast<std::size_t>(len));
}

void write_trajectory_csv(std::ostream& out, const std::vector<DiagnosticsRecord>& samples,
                          Index width) {
  const auto cols = trajectory_columns(width);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) out << ',';
    out << cols[i];
  }
  out << '\n';
  for (const auto& s : samples) {
    if (s.gram_eigs.size() != width || s.ritz_values.size() != width) {
      throw Error(ErrorCode::dimension_mismatch, "write_trajectory_csv: sample width differs from header");
    }
    out << format_double(s.t) << ',' << format_double(s.energy) << ','
        << format_double(s.grad_norm) << ',' << format_double(s.defect) << ','
        << format_double(s.dt_used);
    for (Index i = 0; i < width; ++i) out << ',' << format_double(s.gram_eigs(i));
    for (Index i = 0; i < width; ++i) out << ',' << format_double(s.ritz_values(i));
    out << ',' << format_double(s.c0_emp) << '\n';
  }
}

void save_trajectory_csv(const std::filesystem::path& path,
                         const std::vector<DiagnosticsRecord>& samples, Index width) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_error, "cannot open " + path.string() + " for writing");
  write_trajectory_csv(out, samples, width);
  if (!out) throw Error(ErrorCode::io_error, "write to " + path.string() + " failed");
}

TrajectoryTable read_trajectory_csv(std::istream& in, const std::string& source) {
  TrajectoryTable table;
  std::string line;
  if (!std::getline(in, line)) parse_fail(source, 1, 1, "missing header");
  for (auto& [name, col] : split_commas(line)) table.columns.push_back(name);

  const std::size_t ncols = table.columns.size();
  if (ncols < 6 || (ncols - 6) % 2 != 0) {
    parse_fail(source, 1, 1, "header has " + std::to_string(ncols) + " columns");
  }
  table.width = static_cast<Index>((ncols - 6) / 2);
  const auto expected = trajectory_columns(table.width);
  for (std::size_t i = 0; i < ncols; ++i) {
    if (table.columns[i] != expected[i]) {
      parse_fail(source, 1, 1, "column " + std::to_string(i + 1) + " is '" + table.columns[i] +
                                   "', expected '" + expected[i] + "'");
    }
  }

  const Index N = table.width;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() && in.peek() == std::char_traits<char>::eof()) break;
    const auto fields = split_commas(line);
    if (fields.size() != ncols) {
      parse_fail(source, lineno, 1,
                 "expected " + std::to_string(ncols) + " fields, got " + std::to_string(fields.size()));
    }
    std::vector<double> v(ncols);
    std::vector<std::string> text(ncols);
    for (std::size_t i = 0; i < ncols; ++i) {
      v[i] = parse_field(fields[i].first, source, lineno, fields[i].second);
      text[i] = fields[i].first;
    }
    DiagnosticsRecord r;
    r.t = v[0];
    r.energy = v[1];
    r.grad_norm = v[2];
    r.defect = v[3];
    r.dt_used = v[4];
    r.gram_eigs.resize(N);
    r.ritz_values.resize(N);
    for (Index i = 0; i < N; ++i) {
      r.gram_eigs(i) = v[5 + static_cast<std::size_t>(i)];
      r.ritz_values(i) = v[5 + static_cast<std::size_t>(N + i)];
    }
    r.c0_emp = v[ncols - 1];
    table.samples.push_back(std::move(r));
    table.cells.push_back(std::move(text));
  }
  return table;
}

TrajectoryTable load_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  return read_trajectory_csv(in, path.string());
}

}  // namespace grassflow
