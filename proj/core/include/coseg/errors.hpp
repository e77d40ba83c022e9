#pragma once

#include <stdexcept>
#include <string>

namespace coseg {

// Shape/precondition violations on tensor operations.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Numeric contract violations (non-finite values, invalid domains).
struct ValueError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user-facing configuration (CLI flags, config structs).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Filesystem-level failures (open/read/write).
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A file was read but its contents are malformed (bad magic, truncation,
// version mismatch, unparsable manifest). Distinct from IoError.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace coseg
