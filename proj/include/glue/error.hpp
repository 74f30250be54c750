#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace glue {

enum class ErrorKind {
  EmptyRegion,
  DomainMismatch,
  SurfaceOutsideDomain,
  ParamOutOfRange,
  BandOutsideRegion,
  NetSourceMismatch,
  NoConvergence,
  DegenerateMass,
  MetricNotPositive,
  DomainContainsSingularity,
  ConfigError,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::EmptyRegion: return "EmptyRegion";
    case ErrorKind::DomainMismatch: return "DomainMismatch";
    case ErrorKind::SurfaceOutsideDomain: return "SurfaceOutsideDomain";
    case ErrorKind::ParamOutOfRange: return "ParamOutOfRange";
    case ErrorKind::BandOutsideRegion: return "BandOutsideRegion";
    case ErrorKind::NetSourceMismatch: return "NetSourceMismatch";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::DegenerateMass: return "DegenerateMass";
    case ErrorKind::MetricNotPositive: return "MetricNotPositive";
    case ErrorKind::DomainContainsSingularity: return "DomainContainsSingularity";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure in the library is a GlueError carrying one of the kinds
/// above. `value` holds the offending quantity when there is one (e.g. the
/// measured flux mismatch for NetSourceMismatch).
class GlueError : public std::runtime_error {
 public:
  GlueError(ErrorKind kind, const std::string& what, double value = 0.0)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what),
        kind_(kind),
        value_(value) {}

  ErrorKind kind() const noexcept { return kind_; }
  double value() const noexcept { return value_; }

  /// Mathematical obstructions, as opposed to bad input.
  bool is_obstruction() const noexcept {
    return kind_ == ErrorKind::NetSourceMismatch ||
           kind_ == ErrorKind::NoConvergence ||
           kind_ == ErrorKind::MetricNotPositive;
  }

 private:
  ErrorKind kind_;
  double value_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what,
                              double value = 0.0) {
  throw GlueError(kind, what, value);
}

}  // namespace glue
