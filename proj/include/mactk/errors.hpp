#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mactk {

enum class ErrorKind {
  InvalidInput,
  SchemaMismatch,
  ParseFailure,
  OutOfRange,
  InvalidSubset,
  Load,
  Pattern,
  Config,
  BackendUnavailable,
  Credential,
  Capability,
  GameEvaluation,
  Capacity,
  Report,
  Metric,
  Shape,
  DegenerateAgreement,
  Range,
};

const char* to_string(ErrorKind kind);

/// Single exception type for the toolkit; `kind()` carries the category
/// callers branch on (the CLI maps kinds to exit codes).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string message)
      : std::runtime_error(std::move(message)), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace mactk
