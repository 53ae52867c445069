#pragma once

#include <stdexcept>
#include <string>

namespace iontrap {

enum class ErrorKind {
  Schema,
  SelfIntersection,
  Overlap,
  DuplicateId,
  InvalidLayout,
  BelowPlane,
  DegenerateTriangle,
  DimensionMismatch,
  NotNormalized,
  NoStationaryPoint,
  NonConvergence,
  RankDeficient,
  TooManyConstraints,
  UnknownKind,
  Instability,
  Degenerate,
  Infeasible,
  Unbounded,
  EmptyPattern,
  InvalidArgument,
  Io,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Schema: return "schema";
    case ErrorKind::SelfIntersection: return "self-intersection";
    case ErrorKind::Overlap: return "overlap";
    case ErrorKind::DuplicateId: return "duplicate-id";
    case ErrorKind::InvalidLayout: return "invalid-layout";
    case ErrorKind::BelowPlane: return "below-plane";
    case ErrorKind::DegenerateTriangle: return "degenerate-triangle";
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::NotNormalized: return "not-normalized";
    case ErrorKind::NoStationaryPoint: return "no-stationary-point";
    case ErrorKind::NonConvergence: return "non-convergence";
    case ErrorKind::RankDeficient: return "rank-deficient";
    case ErrorKind::TooManyConstraints: return "too-many-constraints";
    case ErrorKind::UnknownKind: return "unknown-kind";
    case ErrorKind::Instability: return "instability";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Infeasible: return "infeasible";
    case ErrorKind::Unbounded: return "unbounded";
    case ErrorKind::EmptyPattern: return "empty-pattern";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace iontrap
