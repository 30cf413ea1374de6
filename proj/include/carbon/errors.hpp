#pragma once

#include <stdexcept>
#include <string>

namespace carbon {

/// Exit codes of the command-line driver. Every library error maps onto one.
enum class ExitCode : int {
  success = 0,
  failure = 1,
  validation = 2,
  numerical = 3,
  infeasible = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

/// Bad input: malformed files, violated invariants, unmet preconditions.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ExitCode::validation, what) {}
};

/// Input file that does not parse. Carries the 1-based line number.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : ValidationError(file + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Singular systems, degenerate innovations, failed factorizations.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what) : Error(ExitCode::numerical, what) {}
};

/// The portfolio constraint set admits no point.
class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what) : Error(ExitCode::infeasible, what) {}
};

}  // namespace carbon
