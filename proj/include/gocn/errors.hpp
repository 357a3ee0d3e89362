#pragma once

#include <stdexcept>
#include <string>

namespace gocn {

// Shape or argument misuse by calling code (mismatched dimensions etc).
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid configuration values (hyperparameters, CLI flag combinations).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad or missing input data: dataset files, graphs violating their
// invariants, parameter files. Messages carry file/line context where
// one exists.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure: singular linear system, non-finite loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Misuse of the differentiation tape (reuse after backward, non-scalar
// output, values recorded on different tapes).
class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace gocn
