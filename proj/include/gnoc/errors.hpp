#pragma once

#include <stdexcept>
#include <string>

namespace gnoc {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or grids do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A query point lies outside the time interval; no extrapolation is done.
class OutOfRangeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Invalid construction arguments (bounds, weights, physical constants).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// An integration produced a non-finite state.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double time) : Error(what), time_(time) {}
  double time() const noexcept { return time_; }

 private:
  double time_;
};

/// A matrix that must be positive definite is not.
class NotPositiveDefinite : public Error {
 public:
  using Error::Error;
};

}  // namespace gnoc
