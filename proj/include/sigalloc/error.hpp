#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sigalloc {

enum class ErrorCode {
  InvalidPath,
  UnsupportedLevel,
  GridMismatch,
  DegenerateLeadLag,
  ShapeError,
  NotScalar,
  EmptyScenario,
  EmptyBatch,
  InsufficientHistory,
  PreconditionFailed,
  Empty,
  InvalidCov,
  FormatError,
  InvalidConfig,
  StrategyViolation,
  IoError,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidPath: return "InvalidPath";
    case ErrorCode::UnsupportedLevel: return "UnsupportedLevel";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::DegenerateLeadLag: return "DegenerateLeadLag";
    case ErrorCode::ShapeError: return "ShapeError";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::EmptyScenario: return "EmptyScenario";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::InsufficientHistory: return "InsufficientHistory";
    case ErrorCode::PreconditionFailed: return "PreconditionFailed";
    case ErrorCode::Empty: return "Empty";
    case ErrorCode::InvalidCov: return "InvalidCov";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::StrategyViolation: return "StrategyViolation";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the module error codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace sigalloc
