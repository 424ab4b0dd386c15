#pragma once

#include <stdexcept>
#include <string>

namespace forgeval {

// Error categories map one-to-one onto CLI exit codes (usage=1, data=2,
// backend/protocol=3).
enum class ErrorKind { usage, data, backend, protocol };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& message) : Error(ErrorKind::usage, message) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& message) : Error(ErrorKind::data, message) {}
};

class BackendError : public Error {
 public:
  explicit BackendError(const std::string& message) : Error(ErrorKind::backend, message) {}
};

class ProtocolError : public Error {
 public:
  explicit ProtocolError(const std::string& message) : Error(ErrorKind::protocol, message) {}
};

// Clean and attacked predictions were produced under different calibration
// models. Reported as a data error: the inputs violate the fixed-threshold rule.
class ThresholdReuseError : public DataError {
 public:
  explicit ThresholdReuseError(const std::string& message) : DataError(message) {}
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
      return 1;
    case ErrorKind::data:
      return 2;
    case ErrorKind::backend:
    case ErrorKind::protocol:
      return 3;
  }
  return 2;
}

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage:
      return "usage";
    case ErrorKind::data:
      return "data";
    case ErrorKind::backend:
      return "backend";
    case ErrorKind::protocol:
      return "protocol";
  }
  return "unknown";
}

}  // namespace forgeval
