#pragma once

#include <stdexcept>
#include <string>

namespace salforge {

// Base type for everything this library throws on purpose.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape/axis mismatch between tensors.
struct DimensionError : Error {
  using Error::Error;
};

// Argument outside its documented domain.
struct InvalidArgument : Error {
  using Error::Error;
};

// Bad model/run configuration (duplicate names, unknown keys, empty splits).
struct ConfigError : Error {
  using Error::Error;
};

// Operation invoked out of order (e.g. backward before forward).
struct StateError : Error {
  using Error::Error;
};

// Malformed on-disk data.
struct ParseError : Error {
  using Error::Error;
};

// Structurally valid data violating a dataset invariant.
struct ValidationError : Error {
  using Error::Error;
};

// A required external input (checkpoint, file) is absent.
struct MissingResource : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace salforge
