#pragma once

#include <stdexcept>
#include <string>

namespace meshtex {

// Base for every error the library raises. Tools map ValidationError
// subclasses to exit code 2 and DivergenceError to exit code 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed text input (OBJ lines, config values, checkpoint headers).
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Connectivity violations: non-triangle faces, bad indices, non-manifold or
// open edges, inconsistent winding.
class TopologyError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Degenerate geometry: zero-length edges, zero-area faces, zero total area.
class GeometryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Tensor shape mismatches and invalid arguments to numeric routines.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A loss or value became NaN/Inf during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace meshtex
