#pragma once

#include <stdexcept>
#include <string>

namespace sapf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values (head divisibility, loss weights, vocab mismatch).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// I/O or file-format problems.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace sapf
