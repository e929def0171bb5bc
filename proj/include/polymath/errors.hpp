#pragma once

#include <stdexcept>
#include <string>

namespace polymath {

// Error codes mirror the recoverable failure modes of the engine. Callers
// that can recover (e.g. the planner loop refusing an illegal jump) switch
// on the code; everything else propagates to the run boundary.
enum class ErrorCode {
  cycle_detected,
  missing_dependency,
  rerun_limit_exceeded,
  jump_budget_exceeded,
  illegal_jump,
  duplicate_id,
  empty_db,
  unsorted_input,
  too_large,
  invalid_matching,
  invalid_proposal,
  parse_error,
  validation_error,
  budget_exhausted,
  transport_failure,
  auth_failure,
  malformed_after_retries,
  decomposition_invalid,
  invalid_config,
  invalid_argument,
  io_error,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::cycle_detected: return "cycle-detected";
    case ErrorCode::missing_dependency: return "missing-dependency";
    case ErrorCode::rerun_limit_exceeded: return "rerun-limit-exceeded";
    case ErrorCode::jump_budget_exceeded: return "jump-budget-exceeded";
    case ErrorCode::illegal_jump: return "illegal-jump";
    case ErrorCode::duplicate_id: return "duplicate-id";
    case ErrorCode::empty_db: return "empty-db";
    case ErrorCode::unsorted_input: return "unsorted-input";
    case ErrorCode::too_large: return "too-large";
    case ErrorCode::invalid_matching: return "invalid-matching";
    case ErrorCode::invalid_proposal: return "invalid-proposal";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::validation_error: return "validation-error";
    case ErrorCode::budget_exhausted: return "budget-exhausted";
    case ErrorCode::transport_failure: return "transport-failure";
    case ErrorCode::auth_failure: return "auth-failure";
    case ErrorCode::malformed_after_retries: return "malformed-after-retries";
    case ErrorCode::decomposition_invalid: return "decomposition-invalid";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::io_error: return "io-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace polymath
