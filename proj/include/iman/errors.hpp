#pragma once

#include <stdexcept>
#include <string>

namespace iman {

// One exception type per failure class so callers (and tests) can catch
// exactly what they expect.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape / dimension mismatches between tensors.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid argument values (bad eps, bad index, bad rate, ...).
struct ParamError : Error {
  using Error::Error;
};

// Invalid static configuration detected at construction time.
struct ConfigError : Error {
  using Error::Error;
};

// A feasibility constraint cannot be satisfied (missingness tables).
struct ConstraintError : Error {
  using Error::Error;
};

// Non-finite value produced where a finite one is required.
struct EvalError : Error {
  using Error::Error;
};

// Training diverged (non-finite loss or parameters).
struct TrainError : Error {
  using Error::Error;
};

// A metric is undefined for the given inputs (single-class AUC).
struct MetricError : Error {
  using Error::Error;
};

// File format / IO failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace iman
