#pragma once

#include <stdexcept>
#include <string>

namespace pmtk {

// Base of every error the toolkit throws. The CLI maps UsageError/ConfigError
// to exit code 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or extents that do not fit an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid parameters (k <= 0, unsupported factor, unknown variant...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad data content: labels out of range, empty datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed files on disk.
class FormatError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward on a non-scalar.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced by an operation (debug builds only).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pmtk
