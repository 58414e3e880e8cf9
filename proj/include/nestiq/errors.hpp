#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nestiq {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the documented domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed external input (direction-number files, config files, pilot files).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what), line_(0) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Underflow, non-convergence, loss of positive definiteness.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Pilot fit rejected because the rung data are inconsistent with a power law.
class FitQualityError : public Error {
 public:
  using Error::Error;
};

/// No allocation meets the tolerance; `binding()` names the constraint that fails.
class InfeasibleError : public Error {
 public:
  InfeasibleError(const std::string& what, std::string binding)
      : Error(what), binding_(std::move(binding)) {}

  const std::string& binding() const noexcept { return binding_; }

 private:
  std::string binding_;
};

}  // namespace nestiq
