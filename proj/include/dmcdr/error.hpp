#pragma once

#include <stdexcept>
#include <string>

namespace dmcdr {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyper-parameter or model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed input text; carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

// Well-formed input whose values violate a domain constraint.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Diffusion step or array index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Data-level precondition failures (empty history, no overlap, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dmcdr
