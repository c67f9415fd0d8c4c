#pragma once

#include <stdexcept>
#include <string>

namespace nsae {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Shape or size mismatch between operands.
struct DimensionError : Error {
  using Error::Error;
};

/// Bad or inconsistent configuration (unknown keys, wrong head size, ...).
struct ConfigError : Error {
  using Error::Error;
};

/// Non-finite values, divergence, eigensolver non-convergence.
struct NumericalError : Error {
  using Error::Error;
};

/// Episode sampling cannot be satisfied by the dataset.
struct SamplingError : Error {
  using Error::Error;
};

/// Zero-norm features, degenerate batches, degenerate ICC.
struct DegeneracyError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace nsae
