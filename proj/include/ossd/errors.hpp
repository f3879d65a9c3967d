#pragma once

#include <stdexcept>
#include <string>

namespace ossd {

// Bad configuration value or unknown config key. CLI exit status 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed embedding / model / score file. CLI exit status 3.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Singular covariance and similar numerical breakdowns. CLI exit status 4.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violations on library calls (shape mismatch, empty input, ...)
// are reported as std::invalid_argument.

}  // namespace ossd
