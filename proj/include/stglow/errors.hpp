// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace stglow {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A computation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Every entry of a softmax slice was masked out.
class DegenerateMaskError : public Error {
 public:
  using Error::Error;
};

// A normalization channel has (near) zero variance.
class DegenerateChannelError : public Error {
 public:
  using Error::Error;
};

// An invertible linear map became (near) singular.
class SingularityError : public Error {
 public:
  using Error::Error;
};

// Input data is malformed or out of range.
class DataError : public Error {
 public:
  using Error::Error;
};

// Text input could not be parsed.
class ParseError : public DataError {
 public:
  using DataError::DataError;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A named entity (scene, parameter) does not exist.
class LookupError : public Error {
 public:
  using Error::Error;
};

}  // namespace stglow
