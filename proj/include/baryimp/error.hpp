#pragma once

#include <stdexcept>
#include <string>

namespace baryimp {

/// Raised for malformed configuration: bad flags, unknown config keys,
/// inconsistent experiment settings. Maps to CLI exit code 1.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised for malformed or inconsistent input data: CSV parse failures,
/// panels violating observability requirements, missing upstream artifacts.
/// Maps to CLI exit code 2.
class DataError : public std::runtime_error {
public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when a numerical routine cannot complete: non-convergent
/// fixed-point iterations, indefinite matrices where positive definite
/// ones are required, unbounded linear programs.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace baryimp
