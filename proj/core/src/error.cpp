#include "grassflow/error.hpp"

namespace grassflow {

std::string_view error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::asymmetric_input: return "ASYMMETRIC_INPUT";
    case ErrorCode::non_square: return "NON_SQUARE";
    case ErrorCode::dimension_mismatch: return "DIMENSION_MISMATCH";
    case ErrorCode::invalid_argument: return "INVALID_ARGUMENT";
    case ErrorCode::unbounded_matrix_free: return "UNBOUNDED_MATRIX_FREE";
    case ErrorCode::not_dense_representable: return "NOT_DENSE_REPRESENTABLE";
    case ErrorCode::parse_error: return "PARSE_ERROR";
    case ErrorCode::non_symmetric_header: return "NON_SYMMETRIC_HEADER";
    case ErrorCode::admissibility_failure: return "ADMISSIBILITY_FAILURE";
    case ErrorCode::non_finite_state: return "NON_FINITE_STATE";
    case ErrorCode::step_underflow: return "STEP_UNDERFLOW";
    case ErrorCode::energy_increase: return "ENERGY_INCREASE";
    case ErrorCode::no_convergence: return "NO_CONVERGENCE";
    case ErrorCode::singular_matrix: return "SINGULAR_MATRIX";
    case ErrorCode::insufficient_samples: return "INSUFFICIENT_SAMPLES";
    case ErrorCode::non_positive_value: return "NON_POSITIVE_VALUE";
    case ErrorCode::config_missing_field: return "CONFIG_MISSING_FIELD";
    case ErrorCode::config_invalid: return "CONFIG_INVALID";
    case ErrorCode::check_needs_dense: return "CHECK_NEEDS_DENSE";
    case ErrorCode::io_error: return "IO_ERROR";
  }
  return "UNKNOWN";
}

}  // namespace grassflow
