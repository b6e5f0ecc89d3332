#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdon {

#ifdef CDON_REAL_FLOAT
using real = float;
#else
using real = double;
#endif

/// Shape or length mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced or consumed by an operation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent configuration (bad ratio, widths, unknown keys, ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Operation called in a way its contract forbids.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed file (checkpoint, annotation, detection records).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// RoI that covers no feature cell after clamping.
class DegenerateRoiError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace cdon
