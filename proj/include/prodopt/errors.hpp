#pragma once

#include <stdexcept>
#include <string>

namespace prodopt {

// Mismatched qubit counts or incompatible matrix/sheet dimensions.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A requested object exceeds a configured size budget (dense limit, pair budget, ...).
struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

// Non-finite values or other numerical breakdowns during evaluation.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid run configuration (bad grids, unknown keys, malformed files).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace prodopt
