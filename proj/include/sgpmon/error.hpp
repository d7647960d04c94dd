#pragma once

#include <stdexcept>
#include <string>

namespace sgpmon {

/// Error categories surfaced by the library. The CLI maps them to the
/// machine-readable `kind` field of its stderr error record.
enum class ErrorKind {
  InvalidInput,
  SingularEmbedding,
  NonPositiveDefinite,
  DegenerateDuration,
  InsufficientData,
  OptimizerContract,
  NonFinite,
  FilterCollapse,
  UndefinedMetric,
  Format,
  InsufficientRank,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid_input";
    case ErrorKind::SingularEmbedding: return "singular_embedding";
    case ErrorKind::NonPositiveDefinite: return "non_positive_definite";
    case ErrorKind::DegenerateDuration: return "degenerate_duration";
    case ErrorKind::InsufficientData: return "insufficient_data";
    case ErrorKind::OptimizerContract: return "optimizer_contract";
    case ErrorKind::NonFinite: return "non_finite";
    case ErrorKind::FilterCollapse: return "filter_collapse";
    case ErrorKind::UndefinedMetric: return "undefined_metric";
    case ErrorKind::Format: return "format";
    case ErrorKind::InsufficientRank: return "insufficient_rank";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

}  // namespace sgpmon
