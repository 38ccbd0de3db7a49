#pragma once

#include <stdexcept>
#include <string>

namespace geoprev {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid polygon or mesh input (zero area, non-finite coordinates).
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// Mesh refinement could not meet its quality/size constraints.
class RefinementError : public Error {
 public:
  using Error::Error;
};

/// Input data inconsistent with the model or design (empty area, bad counts).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Factorization, convergence or other numerical failure.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-range configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace geoprev
