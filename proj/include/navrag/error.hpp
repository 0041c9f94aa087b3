#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace navrag {

enum class ErrorKind {
  MissingFile,
  SchemaViolation,
  InvariantViolation,
  IoError,
  EmptyScene,
  ArityError,
  SchemaExhausted,
  NetworkError,
  AuthError,
  BackendRefusal,
  Unreachable,
  NoEligibleStart,
  UnknownNode,
  Misalignment,
  ConfigError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::InvariantViolation: return "InvariantViolation";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::EmptyScene: return "EmptyScene";
    case ErrorKind::ArityError: return "ArityError";
    case ErrorKind::SchemaExhausted: return "SchemaExhausted";
    case ErrorKind::NetworkError: return "NetworkError";
    case ErrorKind::AuthError: return "AuthError";
    case ErrorKind::BackendRefusal: return "BackendRefusal";
    case ErrorKind::Unreachable: return "Unreachable";
    case ErrorKind::NoEligibleStart: return "NoEligibleStart";
    case ErrorKind::UnknownNode: return "UnknownNode";
    case ErrorKind::Misalignment: return "Misalignment";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library. `entity()` names the offending id,
/// path or JSON pointer when one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string entity, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " +
                           (entity.empty() ? message : entity + ": " + message)),
        kind_(kind),
        entity_(std::move(entity)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& entity() const noexcept { return entity_; }

 private:
  ErrorKind kind_;
  std::string entity_;
};

/// Process exit codes: 0 success, 2 validation, 3 backend, 4 partial-scene
/// failures.
inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NetworkError:
    case ErrorKind::AuthError:
    case ErrorKind::BackendRefusal:
    case ErrorKind::SchemaExhausted:
      return 3;
    default:
      return 2;
  }
}

}  // namespace navrag
