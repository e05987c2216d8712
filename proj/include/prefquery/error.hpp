#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prefquery {

enum class ErrorKind {
  validation,
  domain,
  incompatible,
  numerical,
  io,
  state,
  protocol,
  retryable,
  internal,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::validation: return "validation";
    case ErrorKind::domain: return "domain";
    case ErrorKind::incompatible: return "incompatible";
    case ErrorKind::numerical: return "numerical";
    case ErrorKind::io: return "io";
    case ErrorKind::state: return "state";
    case ErrorKind::protocol: return "protocol";
    case ErrorKind::retryable: return "retryable";
    case ErrorKind::internal: return "internal";
  }
  return "unknown";
}

// Base exception for the library. `kind` drives CLI exit codes and HTTP
// status mapping.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// A pipeline failure tagged with the stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.kind(), stage + ": " + cause.what()), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

// Process exit codes used by the command line tool.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io:
    case ErrorKind::retryable:
      return 3;
    case ErrorKind::numerical:
      return 4;
    default:
      return 2;
  }
}

}  // namespace prefquery
