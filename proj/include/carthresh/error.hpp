#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace carthresh {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input. `line()` is 1-based, 0 when not tied to a line.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class NotConnectedError : public Error {
 public:
  using Error::Error;
};

/// Raised when an operation that needs equal replication per area gets an unbalanced layout.
class BalanceError : public Error {
 public:
  using Error::Error;
};

class SingularDesignError : public Error {
 public:
  using Error::Error;
};

class DegenerateCovariateError : public Error {
 public:
  using Error::Error;
};

/// A chain produced a non-finite state. `iteration()` is 1-based.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : Error("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace carthresh
