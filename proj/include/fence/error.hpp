#pragma once

#include <stdexcept>
#include <string>

namespace fence {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: configuration values, malformed files, out-of-range arguments.
class InputError : public Error {
public:
  using Error::Error;
};

class InvalidConfiguration : public InputError {
public:
  using InputError::InputError;
};

class DomainError : public InputError {
public:
  using InputError::InputError;
};

/// Parse failure with the offending line (1-based) when known.
class ParseError : public InputError {
public:
  ParseError(const std::string& what, long line = 0)
      : InputError(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  long line() const noexcept { return line_; }

private:
  long line_;
};

/// Failures of the numerical machinery (factorizations, eigen-solvers, degenerate bases).
class NumericalError : public Error {
public:
  using Error::Error;
};

class SingularSystemError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class NumericalRankError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class DegenerateBasisError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

class GenerationError : public NumericalError {
public:
  using NumericalError::NumericalError;
};

}  // namespace fence
