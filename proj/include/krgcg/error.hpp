#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace krgcg {

enum class ErrorCode {
  invalid_params,
  invalid_atom,
  invalid_domain,
  unbalanced_input,
  negative_weight,
  too_large,
  diagonal_singularity,
  extremality_violation,
  insufficient_data,
  config_invalid,
  io_error,
  lp_failure,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_params: return "invalid-params";
    case ErrorCode::invalid_atom: return "invalid-atom";
    case ErrorCode::invalid_domain: return "invalid-domain";
    case ErrorCode::unbalanced_input: return "unbalanced-input";
    case ErrorCode::negative_weight: return "negative-weight";
    case ErrorCode::too_large: return "too-large";
    case ErrorCode::diagonal_singularity: return "diagonal-singularity";
    case ErrorCode::extremality_violation: return "extremality-violation";
    case ErrorCode::insufficient_data: return "insufficient-data";
    case ErrorCode::config_invalid: return "config-invalid";
    case ErrorCode::io_error: return "io-error";
    case ErrorCode::lp_failure: return "lp-failure";
  }
  return "unknown";
}

/// Exception carrying a machine-readable error kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace krgcg
