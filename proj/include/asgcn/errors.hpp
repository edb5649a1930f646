#pragma once

#include <stdexcept>
#include <string>

namespace asgcn {

// Process exit codes used by the CLI: 0 success, 2 validation,
// 3 numeric failure, 4 I/O.
enum class ExitCode : int {
  ok = 0,
  validation = 2,
  numeric = 3,
  io = 4,
};

class Error : public std::runtime_error {
public:
  Error(ExitCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ExitCode code() const { return code_; }

private:
  ExitCode code_;
};

// Incompatible tensor/matrix shapes.
class DimensionError : public Error {
public:
  explicit DimensionError(const std::string& msg)
      : Error(ExitCode::validation, msg) {}
};

// Invalid argument value (tau <= 0, L < 1, burn_in >= T, ...).
class ParameterError : public Error {
public:
  explicit ParameterError(const std::string& msg)
      : Error(ExitCode::validation, msg) {}
};

// Invalid domain object (disconnected graph, malformed config, ...).
class ValidationError : public Error {
public:
  explicit ValidationError(const std::string& msg)
      : Error(ExitCode::validation, msg) {}
};

// Malformed input file.
class ParseError : public Error {
public:
  explicit ParseError(const std::string& msg)
      : Error(ExitCode::validation, msg) {}
};

// NaN/Inf where a finite value is required, divergence, ...
class NumericError : public Error {
public:
  explicit NumericError(const std::string& msg)
      : Error(ExitCode::numeric, msg) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(ExitCode::io, msg) {}
};

}  // namespace asgcn
