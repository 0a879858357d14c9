#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "grassflow/operators.hpp"

namespace grassflow {

enum class MatrixMarketLayout { coordinate, array };

/// Reads a real symmetric MatrixMarket matrix (coordinate or array layout,
/// lower triangle stored) into a dense symmetric matrix. `source` only labels
/// error messages. Errors carry "line L, col C" positions.
Matrix read_matrixmarket(std::istream& in, const std::string& source = "<stream>");

/// load + build_dense.
Operator load_matrixmarket(const std::filesystem::path& path);

/// Writes the lower triangle of a symmetric matrix with 17 significant
/// digits, so that reading it back reproduces every entry bitwise.
void write_matrixmarket(std::ostream& out, const Matrix& matrix,
                        MatrixMarketLayout layout = MatrixMarketLayout::coordinate);

void save_matrixmarket(const std::filesystem::path& path, const Matrix& matrix,
                       MatrixMarketLayout layout = MatrixMarketLayout::coordinate);

}  // namespace grassflow
