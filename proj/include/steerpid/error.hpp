#pragma once

#include <stdexcept>
#include <string>

namespace steerpid {

/// Base for every error raised by the library. `exit_code()` maps the error
/// category onto the CLI's process exit status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 3; }
};

/// Bad argument, configuration value or malformed input data.
class ValidationError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

/// Malformed file content. Carries the 1-based line number when known (0 otherwise).
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : ValidationError(line ? what + " (line " + std::to_string(line) + ")" : what), message_(what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

  /// Same error with `context` (typically the file name) prepended.
  ParseError with_context(const std::string& context) const { return ParseError(context + ": " + message_, line_); }

 private:
  std::string message_;
  std::size_t line_;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// An internal invariant was violated.
class InvariantError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

inline void ensure(bool cond, const std::string& msg) {
  if (!cond) throw InvariantError(msg);
}

}  // namespace detail
}  // namespace steerpid
