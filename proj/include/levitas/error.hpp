#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace levitas {

enum class ErrorKind {
  domain,
  configuration,
  parse,
  integration_failure,
  insufficient_data,
  fit_failure,
  no_peak,
  inversion,
  indeterminate_charge,
  no_detectable_force,
  singularity,
  io,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::domain: return "domain";
    case ErrorKind::configuration: return "configuration";
    case ErrorKind::parse: return "parse";
    case ErrorKind::integration_failure: return "integration_failure";
    case ErrorKind::insufficient_data: return "insufficient_data";
    case ErrorKind::fit_failure: return "fit_failure";
    case ErrorKind::no_peak: return "no_peak";
    case ErrorKind::inversion: return "inversion";
    case ErrorKind::indeterminate_charge: return "indeterminate_charge";
    case ErrorKind::no_detectable_force: return "no_detectable_force";
    case ErrorKind::singularity: return "singularity";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

/// Analysis errors are outcomes of valid input that carries no usable signal;
/// everything else is a usage or configuration problem.
constexpr bool is_analysis_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::integration_failure:
    case ErrorKind::insufficient_data:
    case ErrorKind::fit_failure:
    case ErrorKind::no_peak:
    case ErrorKind::inversion:
    case ErrorKind::indeterminate_charge:
    case ErrorKind::no_detectable_force:
    case ErrorKind::singularity:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) throw Error(kind, what);
}

inline void require_domain(bool condition, const std::string& what) {
  require(condition, ErrorKind::domain, what);
}

class IntegrationFailure : public Error {
 public:
  IntegrationFailure(std::size_t step, const std::string& what)
      : Error(ErrorKind::integration_failure, what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace levitas
