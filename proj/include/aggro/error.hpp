#pragma once

#include <stdexcept>
#include <string>

namespace aggro {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, invalid parameters, violated preconditions.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failures (missing files, unwritable paths).
class IoError : public Error {
 public:
  using Error::Error;
};

/// A numerical or training failure (non-finite loss, shape mismatch).
class ComputeError : public Error {
 public:
  using Error::Error;
};

}  // namespace aggro
