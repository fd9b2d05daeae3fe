#pragma once

#include <stdexcept>
#include <string>

namespace charagram {

/// Base class for every error the library throws. The CLI maps the
/// subclasses onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration or invalid arguments (exit code 1).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data, I/O failure, or vocabulary/model mismatch (exit code 2).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite parameters or metrics (exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace charagram
