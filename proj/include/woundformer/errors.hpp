#pragma once

#include <stdexcept>
#include <string>

namespace woundformer {

/// Base of every error the library raises. `category()` is what the CLI
/// prints and maps to an exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* category() const noexcept { return "error"; }
};

class ShapeError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "shape"; }
};

class ArgumentError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "argument"; }
};

/// A forward op produced NaN or Inf. The message names the op.
class NumericError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "numeric"; }
};

class FormatError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "format"; }
};

class LabelRangeError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "label-range"; }
};

class DimensionMismatchError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "dimension-mismatch"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "io"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "config"; }
};

/// Paired test with no nonzero differences.
class UndefinedTestError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "undefined-test"; }
};

}  // namespace woundformer
