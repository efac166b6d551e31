#ifndef GOGNN_ERROR_HPP
#define GOGNN_ERROR_HPP

#include <stdexcept>
#include <string>

namespace gognn {

/// Malformed input data: bad JSON, schema violations, invariant failures.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.  The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation produced a NaN or infinity.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Bad configuration values (synth ranges, train hyperparameters, flags).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace gognn

#endif  // GOGNN_ERROR_HPP
