// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace xlret {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimension disagreement; the message names the offending shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A documented precondition of an operation was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid or unknown configuration value; the message names the key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data (files, corpora, vocabulary coverage).
class DataError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite loss or gradient.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A pipeline stage was invoked before its prerequisites ran.
class OrderingError : public Error {
 public:
  using Error::Error;
};

// An artifact does not match the configuration trying to load it.
class CompatibilityError : public Error {
 public:
  using Error::Error;
};

}  // namespace xlret
