#include "grassflow/operators.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <variant>

#include "grassflow/error.hpp"

namespace grassflow {

namespace {

struct DenseData {
  Matrix matrix;
};

struct TridiagonalData {
  Vector diagonal;
  Vector off_diagonal;
};

struct CallbackData {
  Operator::ApplyFn apply;
  std::optional<double> upper_bound;
};

Matrix tridiagonal_apply(const TridiagonalData& t, const Matrix& X) {
  const Index n = t.diagonal.size();
  Matrix Y(n, X.cols());
  for (Index i = 0; i < n; ++i) {
    Y.row(i) = t.diagonal(i) * X.row(i);
    if (i > 0) Y.row(i) += t.off_diagonal(i - 1) * X.row(i - 1);
    if (i + 1 < n) Y.row(i) += t.off_diagonal(i) * X.row(i + 1);
  }
  return Y;
}

}  // namespace

struct Operator::Storage {
  std::variant<DenseData, TridiagonalData, CallbackData> data;
};

OperatorKind Operator::kind() const noexcept {
  switch (storage_->data.index()) {
    case 0: return OperatorKind::dense;
    case 1: return OperatorKind::tridiagonal;
    default: return OperatorKind::matrix_free;
  }
}

bool Operator::symmetry_checked() const noexcept {
  return kind() != OperatorKind::matrix_free;
}

Matrix Operator::apply(const Matrix& X) const {
  if (X.rows() != dim_) {
    std::ostringstream msg;
    msg << "operator of dimension " << dim_ << " applied to block with "
        << X.rows() << " rows";
    throw Error(ErrorCode::dimension_mismatch, msg.str());
  }
  Matrix Y;
  if (const auto* d = std::get_if<DenseData>(&storage_->data)) {
    Y = d->matrix * X;
  } else if (const auto* t = std::get_if<TridiagonalData>(&storage_->data)) {
    Y = tridiagonal_apply(*t, X);
  } else {
    const auto& cb = std::get<CallbackData>(storage_->data);
    Y = cb.apply(X);
    if (Y.rows() != X.rows() || Y.cols() != X.cols()) {
      throw Error(ErrorCode::dimension_mismatch,
                  "matrix-free callback returned a block of the wrong shape");
    }
  }
  if (shift_ != 0.0) Y -= shift_ * X;
  return Y;
}

Matrix Operator::to_dense() const {
  if (!dense_representable()) {
    throw Error(ErrorCode::not_dense_representable,
                "matrix-free operator has no dense assembly");
  }
  return apply(Matrix::Identity(dim_, dim_));
}

std::optional<double> Operator::supplied_upper_bound() const noexcept {
  if (const auto* cb = std::get_if<CallbackData>(&storage_->data)) {
    return cb->upper_bound;
  }
  return std::nullopt;
}

std::pair<double, double> Operator::unshifted_gershgorin() const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  if (const auto* d = std::get_if<DenseData>(&storage_->data)) {
    for (Index i = 0; i < dim_; ++i) {
      const double radius = d->matrix.row(i).cwiseAbs().sum() -
                            std::abs(d->matrix(i, i));
      lo = std::min(lo, d->matrix(i, i) - radius);
      hi = std::max(hi, d->matrix(i, i) + radius);
    }
  } else if (const auto* t = std::get_if<TridiagonalData>(&storage_->data)) {
    for (Index i = 0; i < dim_; ++i) {
      double radius = 0.0;
      if (i > 0) radius += std::abs(t->off_diagonal(i - 1));
      if (i + 1 < dim_) radius += std::abs(t->off_diagonal(i));
      lo = std::min(lo, t->diagonal(i) - radius);
      hi = std::max(hi, t->diagonal(i) + radius);
    }
  } else {
    throw Error(ErrorCode::unbounded_matrix_free,
                "Gershgorin bounds need an assembled operator");
  }
  return {lo, hi};
}

Operator build_dense(const Matrix& matrix) {
  if (matrix.rows() != matrix.cols()) {
    std::ostringstream msg;
    msg << "expected a square matrix, got " << matrix.rows() << "x"
        << matrix.cols();
    throw Error(ErrorCode::non_square, msg.str());
  }
  if (matrix.rows() == 0) {
    throw Error(ErrorCode::invalid_argument, "operator dimension must be >= 1");
  }
  const double scale = matrix.cwiseAbs().maxCoeff();
  const double asym = (matrix - matrix.transpose()).cwiseAbs().maxCoeff();
  if (!std::isfinite(scale) || asym > 1e-12 * scale) {
    std::ostringstream msg;
    msg << "matrix is not symmetric: max |M_ij - M_ji| = " << asym
        << " exceeds 1e-12 * max |M_ij| = " << 1e-12 * scale;
    throw Error(ErrorCode::asymmetric_input, msg.str());
  }
  auto storage = std::make_shared<Operator::Storage>();
  storage->data = DenseData{0.5 * (matrix + matrix.transpose())};
  return Operator(std::move(storage), matrix.rows(), 0.0);
}

Operator build_tridiagonal(Vector diagonal, Vector off_diagonal) {
  const Index n = diagonal.size();
  if (n == 0 || off_diagonal.size() != std::max<Index>(n - 1, 0)) {
    throw Error(ErrorCode::dimension_mismatch,
                "tridiagonal operator needs n diagonal and n-1 off-diagonal "
                "entries");
  }
  auto storage = std::make_shared<Operator::Storage>();
  storage->data = TridiagonalData{std::move(diagonal), std::move(off_diagonal)};
  return Operator(std::move(storage), n, 0.0);
}

Operator build_matrix_free(Index dim, Operator::ApplyFn apply,
                           std::optional<double> upper_bound) {
  if (dim <= 0 || !apply) {
    throw Error(ErrorCode::invalid_argument,
                "matrix-free operator needs a positive dimension and a "
                "callback");
  }
  auto storage = std::make_shared<Operator::Storage>();
  storage->data = CallbackData{std::move(apply), upper_bound};
  return Operator(std::move(storage), dim, 0.0);
}

namespace {

void check_grid(Index m, double domain_length) {
  if (m < 2) throw Error(ErrorCode::invalid_argument, "need m >= 2 grid points");
  if (!(domain_length > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "domain length must be positive");
  }
}

}  // namespace

Operator build_laplacian_1d(Index m, double domain_length) {
  check_grid(m, domain_length);
  const double h = domain_length / static_cast<double>(m + 1);
  const double inv_h2 = 1.0 / (h * h);
  return build_tridiagonal(Vector::Constant(m, 2.0 * inv_h2),
                           Vector::Constant(m - 1, -inv_h2));
}

Operator build_laplacian_1d_matrix_free(Index m, double domain_length) {
  check_grid(m, domain_length);
  const double h = domain_length / static_cast<double>(m + 1);
  const double inv_h2 = 1.0 / (h * h);
  TridiagonalData stencil{Vector::Constant(m, 2.0 * inv_h2),
                          Vector::Constant(m - 1, -inv_h2)};
  return build_matrix_free(
      m, [stencil](const Matrix& X) { return tridiagonal_apply(stencil, X); },
      4.0 * inv_h2);
}

Operator build_schrodinger_1d(Index m, double domain_length, double omega) {
  check_grid(m, domain_length);
  const double h = domain_length / static_cast<double>(m + 1);
  const double inv_h2 = 1.0 / (h * h);
  Vector diagonal(m);
  for (Index i = 0; i < m; ++i) {
    const double x = h * static_cast<double>(i + 1) - 0.5 * domain_length;
    diagonal(i) = 2.0 * inv_h2 + omega * omega * x * x;
  }
  return build_tridiagonal(std::move(diagonal), Vector::Constant(m - 1, -inv_h2));
}

Operator shift_operator(const Operator& op, double s) {
  return Operator(op.storage_, op.dim_, op.shift_ + s);
}

double gershgorin_upper_bound(const Operator& op) {
  if (op.kind() == OperatorKind::matrix_free) {
    const auto bound = op.supplied_upper_bound();
    if (!bound) {
      throw Error(ErrorCode::unbounded_matrix_free,
                  "matrix-free operator has no supplied spectral bound");
    }
    return *bound - op.shift();
  }
  return op.unshifted_gershgorin().second - op.shift();
}

double gershgorin_lower_bound(const Operator& op) {
  return op.unshifted_gershgorin().first - op.shift();
}

double default_shift(const Operator& op) {
  const double upper = gershgorin_upper_bound(op);
  return upper + 0.01 * std::max(std::abs(upper), 1e-300);
}

double estimate_spectral_radius(const Operator& op, int steps,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vector x(op.dim());
  for (Index i = 0; i < x.size(); ++i) x(i) = normal(rng);
  x.normalize();
  double estimate = 0.0;
  for (int k = 0; k < steps; ++k) {
    Vector y = op.apply(x);
    const double norm = y.norm();
    estimate = norm;
    if (norm == 0.0) break;
    x = y / norm;
  }
  return estimate;
}

SpectrumSlice::SpectrumSlice(std::vector<double> eigenvalues,
                             std::optional<double> next)
    : values_(std::move(eigenvalues)), next_(next) {
  if (!std::is_sorted(values_.begin(), values_.end())) {
    throw Error(ErrorCode::invalid_argument,
                "spectrum slice must be in ascending order");
  }
  if (next_ && !values_.empty() && *next_ < values_.back()) {
    throw Error(ErrorCode::invalid_argument,
                "next eigenvalue must not precede the slice");
  }
}

std::optional<double> SpectrumSlice::gap() const noexcept {
  if (!next_ || values_.empty()) return std::nullopt;
  return *next_ - values_.back();
}

}  // namespace grassflow
