#include "mactk/errors.hpp"

namespace mactk {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::SchemaMismatch: return "schema-mismatch";
    case ErrorKind::ParseFailure: return "parse-failure";
    case ErrorKind::OutOfRange: return "out-of-range";
    case ErrorKind::InvalidSubset: return "invalid-subset";
    case ErrorKind::Load: return "load";
    case ErrorKind::Pattern: return "pattern";
    case ErrorKind::Config: return "config";
    case ErrorKind::BackendUnavailable: return "backend-unavailable";
    case ErrorKind::Credential: return "credential";
    case ErrorKind::Capability: return "capability";
    case ErrorKind::GameEvaluation: return "game-evaluation";
    case ErrorKind::Capacity: return "capacity";
    case ErrorKind::Report: return "report";
    case ErrorKind::Metric: return "metric";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::DegenerateAgreement: return "degenerate-agreement";
    case ErrorKind::Range: return "range";
  }
  return "unknown";
}

}  // namespace mactk
