#pragma once

#include <stdexcept>
#include <string>

namespace capsfuse {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or embedding shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN or otherwise unusable floating-point input.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A documented precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// File did not match the expected on-disk layout (bad magic, version, truncation).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Well-formed input whose contents break a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given input, e.g. AUC on a single-class split.
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace capsfuse
