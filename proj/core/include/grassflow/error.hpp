#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace grassflow {

enum class ErrorCode {
  asymmetric_input,
  non_square,
  dimension_mismatch,
  invalid_argument,
  unbounded_matrix_free,
  not_dense_representable,
  parse_error,
  non_symmetric_header,
  admissibility_failure,
  non_finite_state,
  step_underflow,
  energy_increase,
  no_convergence,
  singular_matrix,
  insufficient_samples,
  non_positive_value,
  config_missing_field,
  config_invalid,
  check_needs_dense,
  io_error,
};

/// Stable upper-case identifier used in machine-readable error reports.
std::string_view error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace grassflow
