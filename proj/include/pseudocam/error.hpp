#pragma once

#include <stdexcept>
#include <string>

namespace pseudocam {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced somewhere, or a training run diverged.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad user-supplied data: labels, manifests, thresholds.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Inconsistent network or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// File could not be read or written, or has a malformed layout.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pseudocam
