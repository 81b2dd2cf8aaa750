#pragma once

#include <stdexcept>
#include <string>

namespace dsu {

/// Categories used for CLI exit codes and structured test assertions.
enum class ErrorCode {
  ShapeMismatch,
  DomainViolation,
  InvalidArgument,
  NotOnTape,
  WrongMode,
  NonFinite,
  EmptyInput,
  DegenerateRegion,
  Divergence,
  Io,
  Config,
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch:    return "shape-mismatch";
    case ErrorCode::DomainViolation:  return "domain-violation";
    case ErrorCode::InvalidArgument:  return "invalid-argument";
    case ErrorCode::NotOnTape:        return "not-on-tape";
    case ErrorCode::WrongMode:        return "wrong-mode";
    case ErrorCode::NonFinite:        return "non-finite";
    case ErrorCode::EmptyInput:       return "empty-input";
    case ErrorCode::DegenerateRegion: return "degenerate-region";
    case ErrorCode::Divergence:       return "divergence";
    case ErrorCode::Io:               return "io";
    case ErrorCode::Config:           return "config";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace dsu
