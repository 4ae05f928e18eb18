#pragma once

#include <stdexcept>
#include <string>

namespace gancs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or operator dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced or consumed where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed, corrupted or unsupported file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or unknown configuration keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Network used in a mode inconsistent with how it was evaluated.
class ModeError : public Error {
 public:
  using Error::Error;
};

}  // namespace gancs
