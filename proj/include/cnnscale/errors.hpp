#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cnnscale {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the 1-based line and the offending field.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, std::string field, const std::string& what)
      : Error("line " + std::to_string(line) + " [" + field + "]: " + what),
        line_(line),
        field_(std::move(field)) {}

  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class NonPositiveOutput : public Error {
 public:
  using Error::Error;
};

class TierExhausted : public Error {
 public:
  using Error::Error;
};

class SplitTooFine : public Error {
 public:
  using Error::Error;
};

class InsufficientSamples : public Error {
 public:
  using Error::Error;
};

class DegenerateFit : public Error {
 public:
  using Error::Error;
};

class ZeroMeasured : public Error {
 public:
  using Error::Error;
};

/// Structurally invalid strategy configuration (bad groups, zero PE counts).
class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingTiming : public Error {
 public:
  using Error::Error;
};

}  // namespace cnnscale
