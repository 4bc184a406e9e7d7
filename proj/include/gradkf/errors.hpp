#pragma once

#include <stdexcept>
#include <string>

namespace gradkf {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid input: inconsistent dimensions, malformed configuration, bad parameters.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A run produced a non-finite or ill-conditioned quantity.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace gradkf
