#pragma once

#include <stdexcept>
#include <string>

namespace fes {

enum class ErrorKind {
  Config,       // invalid user configuration (bad flags, bad profile, bad geometry)
  Io,           // missing or unreadable file
  Schema,       // manifest is malformed or has an unknown schema_version
  DimMismatch,  // declared shape disagrees with a payload or another tensor
  NonFinite,    // NaN or Inf where finite values are required
  Invariant,    // a data-model invariant does not hold
  Numeric,      // optimization produced a non-finite loss or gradient
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::DimMismatch: return "dim-mismatch";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::Invariant: return "invariant";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// what() without the kind prefix, for rewrapping with more context.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool ok, ErrorKind kind, const std::string& what) {
  if (!ok) fail(kind, what);
}

}  // namespace fes
