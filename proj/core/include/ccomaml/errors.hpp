#pragma once

#include <stdexcept>
#include <string>

namespace ccomaml {

/// Shape or contract violation inside a tensor operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Misuse of the differentiation machinery (non-scalar output, consumed graph).
class AutodiffError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid user configuration. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset missing, unreadable or too small for the requested episodes. Exit code 3.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or parameter. Exit code 4.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ccomaml
