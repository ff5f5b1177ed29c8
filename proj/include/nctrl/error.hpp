#pragma once

#include <stdexcept>
#include <string>

namespace nctrl {

// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape mismatch in a graph op or kernel.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid numeric arguments (non-stochastic matrix, bad dims, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// File / serialization problems.
class IoError : public Error {
 public:
  using Error::Error;
};

// Stored checksum does not match file contents.
class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

// Unknown format version or truncated / malformed container.
class FormatError : public IoError {
 public:
  using IoError::IoError;
};

// Training diverged (non-finite or exploding loss).
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A flow component collapsed (its diagonal derivative is numerically zero).
class CollapsedFlowError : public Error {
 public:
  using Error::Error;
};

}  // namespace nctrl
