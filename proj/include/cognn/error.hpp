#pragma once

#include <stdexcept>
#include <string>

namespace cognn {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or length mismatch between operands.
class SizeError : public Error {
 public:
  using Error::Error;
};

/// Structurally invalid input (graphs, action fields, samples).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Hyperparameter outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Caller broke an API contract (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Inconsistent run or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed text or binary input. Carries the 1-based line when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t epoch) : Error(what), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace cognn
