#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfpo {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value or record violates a documented invariant or precondition.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input text. Carries the 1-based line and the offending field
/// when they are known (0 / empty otherwise).
class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, std::string field, const std::string& what)
      : ValidationError(format(line, field, what)), line_(line), field_(std::move(field)) {}

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(std::size_t line, const std::string& field, const std::string& what) {
    std::string msg;
    if (line > 0) msg += "line " + std::to_string(line) + ": ";
    if (!field.empty()) msg += "field '" + field + "': ";
    return msg + what;
  }

  std::size_t line_;
  std::string field_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A mask provider failed (as opposed to finding no region).
class ProviderError : public Error {
 public:
  using Error::Error;
};

}  // namespace mfpo
