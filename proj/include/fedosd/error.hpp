#pragma once

#include <stdexcept>
#include <string>

namespace fedosd {

// Exit codes shared with the CLI.
enum class ErrorKind { Config = 2, Numerical = 3, Io = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::Numerical, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};

// Malformed IDX input. `field` names the offending header field.
class IngestionError : public IoError {
 public:
  IngestionError(const std::string& field, const std::string& what)
      : IoError(field + ": " + what), field_(field) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Violated caller precondition (zero vector where nonzero is required, ...).
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Config: return "config";
    case ErrorKind::Numerical: return "numerical";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace fedosd
