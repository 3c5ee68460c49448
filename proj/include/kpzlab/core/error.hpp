#pragma once

#include <stdexcept>
#include <string>

namespace kpzlab {

/// Failure categories. The CLI maps them onto exit codes.
enum class ErrorKind {
  invalid_argument,
  invalid_input,
  invalid_configuration,
  invalid_dimension,
  invalid_scale,
  invalid_level,
  numeric_overflow,
  positivity_loss,
  config_error,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid-argument";
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::invalid_configuration: return "invalid-configuration";
    case ErrorKind::invalid_dimension: return "invalid-dimension";
    case ErrorKind::invalid_scale: return "invalid-scale";
    case ErrorKind::invalid_level: return "invalid-level";
    case ErrorKind::numeric_overflow: return "numeric-overflow";
    case ErrorKind::positivity_loss: return "positivity-loss";
    case ErrorKind::config_error: return "config-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace kpzlab
