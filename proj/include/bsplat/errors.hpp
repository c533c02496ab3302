#pragma once

#include <stdexcept>
#include <string>

namespace bsplat {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller passed malformed input (dimension mismatch, out-of-bounds pixel, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// An internal contract was broken (stale blend records, misaligned optimizer rows).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or parameter during training.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, long iteration) : Error(what), iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

/// File-system and format errors. The kind distinguishes the diagnostics callers care about.
class IoError : public Error {
 public:
  enum class Kind { kMissingFile, kSchema, kResolutionMismatch, kMalformed, kWrite };

  IoError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

}  // namespace bsplat
