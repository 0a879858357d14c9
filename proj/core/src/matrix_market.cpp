#include "grassflow/matrix_market.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include "grassflow/error.hpp"

namespace grassflow {

namespace {

struct Token {
  std::string text;
  std::size_t column;  // 1-based
};

std::vector<Token> tokenize(const std::string& line) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i >= line.size()) break;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    tokens.push_back({line.substr(start, i - start), start + 1});
  }
  return tokens;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  [[noreturn]] void fail(std::size_t column, const std::string& what) const {
    std::ostringstream msg;
    msg << source_ << ": line " << line_no_ << ", col " << column << ": " << what;
    throw Error(ErrorCode::parse_error, msg.str());
  }

  /// Next non-comment, non-blank line; false at end of input.
  bool next_data_line(std::vector<Token>& tokens) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty() && line[0] == '%') continue;
      tokens = tokenize(line);
      if (!tokens.empty()) return true;
    }
    return false;
  }

  bool header(std::vector<Token>& tokens) {
    std::string line;
    if (!std::getline(in_, line)) return false;
    ++line_no_;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens = tokenize(line);
    return true;
  }

  long long parse_int(const Token& tok) const {
    long long value = 0;
    const char* first = tok.text.data();
    const char* last = first + tok.text.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) fail(tok.column, "expected an integer, got '" + tok.text + "'");
    return value;
  }

  double parse_real(const Token& tok) const {
    double value = 0.0;
    const char* first = tok.text.data();
    const char* last = first + tok.text.size();
    if (first != last && *first == '+') ++first;
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last) fail(tok.column, "expected a real number, got '" + tok.text + "'");
    return value;
  }

  std::size_t line_no() const { return line_no_; }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t line_no_ = 0;
};

}  // namespace

Matrix read_matrixmarket(std::istream& in, const std::string& source) {
  Reader reader(in, source);
  std::vector<Token> tokens;
  if (!reader.header(tokens) || tokens.empty() || tokens[0].text != "%%MatrixMarket") {
    reader.fail(1, "missing %%MatrixMarket banner");
  }
  if (tokens.size() != 5) reader.fail(1, "banner needs: %%MatrixMarket matrix <layout> <field> <symmetry>");
  if (lower(tokens[1].text) != "matrix") reader.fail(tokens[1].column, "only 'matrix' objects are supported");

  const std::string layout_name = lower(tokens[2].text);
  MatrixMarketLayout layout;
  if (layout_name == "coordinate") {
    layout = MatrixMarketLayout::coordinate;
  } else if (layout_name == "array") {
    layout = MatrixMarketLayout::array;
  } else {
    reader.fail(tokens[2].column, "unknown layout '" + tokens[2].text + "'");
  }

  const std::string field = lower(tokens[3].text);
  if (field != "real" && field != "integer" && field != "double") {
    reader.fail(tokens[3].column, "unsupported field '" + tokens[3].text + "' (real or integer required)");
  }

  const std::string symmetry = lower(tokens[4].text);
  if (symmetry != "symmetric") {
    std::ostringstream msg;
    msg << source << ": line 1, col " << tokens[4].column << ": symmetry qualifier '"
        << tokens[4].text << "' rejected; only 'symmetric' matrices are accepted";
    throw Error(ErrorCode::non_symmetric_header, msg.str());
  }

  if (!reader.next_data_line(tokens)) reader.fail(1, "missing size line");
  const std::size_t expected_size_tokens = layout == MatrixMarketLayout::coordinate ? 3 : 2;
  if (tokens.size() != expected_size_tokens) {
    reader.fail(tokens.front().column, "size line must have " +
                                           std::to_string(expected_size_tokens) + " integers");
  }
  const long long rows = reader.parse_int(tokens[0]);
  const long long cols = reader.parse_int(tokens[1]);
  if (rows <= 0 || cols <= 0) reader.fail(tokens[0].column, "dimensions must be positive");
  if (rows != cols) {
    std::ostringstream msg;
    msg << source << ": line " << reader.line_no() << ": symmetric matrix must be square, got "
        << rows << "x" << cols;
    throw Error(ErrorCode::non_square, msg.str());
  }
  const Index n = static_cast<Index>(rows);
  Matrix matrix = Matrix::Zero(n, n);

  if (layout == MatrixMarketLayout::coordinate) {
    const long long nnz = reader.parse_int(tokens[2]);
    if (nnz < 0) reader.fail(tokens[2].column, "entry count must be nonnegative");
    std::vector<char> seen(static_cast<std::size_t>(n * n), 0);
    for (long long k = 0; k < nnz; ++k) {
      if (!reader.next_data_line(tokens)) {
        reader.fail(1, "expected " + std::to_string(nnz) + " entries, found " + std::to_string(k));
      }
      if (tokens.size() != 3) reader.fail(tokens.front().column, "entry line needs: row col value");
      const long long i = reader.parse_int(tokens[0]);
      const long long j = reader.parse_int(tokens[1]);
      if (i < 1 || i > rows) reader.fail(tokens[0].column, "row index out of range");
      if (j < 1 || j > cols) reader.fail(tokens[1].column, "column index out of range");
      if (i < j) reader.fail(tokens[0].column, "upper-triangle entry in a symmetric file");
      const double value = reader.parse_real(tokens[2]);
      const auto slot = static_cast<std::size_t>((i - 1) * n + (j - 1));
      if (seen[slot]) reader.fail(tokens[0].column, "duplicate entry");
      seen[slot] = 1;
      matrix(i - 1, j - 1) = value;
      matrix(j - 1, i - 1) = value;
    }
  } else {
    for (Index j = 0; j < n; ++j) {
      for (Index i = j; i < n; ++i) {
        if (!reader.next_data_line(tokens)) reader.fail(1, "array data ended early");
        if (tokens.size() != 1) reader.fail(tokens[1].column, "array layout expects one value per line");
        const double value = reader.parse_real(tokens[0]);
        matrix(i, j) = value;
        matrix(j, i) = value;
      }
    }
  }
  if (reader.next_data_line(tokens)) reader.fail(tokens.front().column, "unexpected trailing data");
  return matrix;
}

Operator load_matrixmarket(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_error, "cannot open " + path.string());
  return build_dense(read_matrixmarket(in, path.string()));
}

namespace {

std::string format17(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

}  // namespace

void write_matrixmarket(std::ostream& out, const Matrix& matrix, MatrixMarketLayout layout) {
  if (matrix.rows() != matrix.cols()) throw Error(ErrorCode::non_square, "matrix must be square");
  const Index n = matrix.rows();
  if (layout == MatrixMarketLayout::coordinate) {
    std::size_t nnz = 0;
    for (Index j = 0; j < n; ++j)
      for (Index i = j; i < n; ++i)
        if (matrix(i, j) != 0.0) ++nnz;
    out << "%%MatrixMarket matrix coordinate real symmetric\n";
    out << n << ' ' << n << ' ' << nnz << '\n';
    for (Index j = 0; j < n; ++j)
      for (Index i = j; i < n; ++i)
        if (matrix(i, j) != 0.0) out << i + 1 << ' ' << j + 1 << ' ' << format17(matrix(i, j)) << '\n';
  } else {
    out << "%%MatrixMarket matrix array real symmetric\n";
    out << n << ' ' << n << '\n';
    for (Index j = 0; j < n; ++j)
      for (Index i = j; i < n; ++i) out << format17(matrix(i, j)) << '\n';
  }
}

void save_matrixmarket(const std::filesystem::path& path, const Matrix& matrix,
                       MatrixMarketLayout layout) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_error, "cannot write " + path.string());
  write_matrixmarket(out, matrix, layout);
}

}  // namespace grassflow
