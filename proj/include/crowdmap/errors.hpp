#pragma once

#include <Eigen/Core>

#include <stdexcept>
#include <string>

namespace crowdmap {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of the operation (e.g. a pixel
/// column outside the image).
class InputDomainError : public Error {
 public:
  using Error::Error;
};

/// The geometry admits no unique answer: parallel lines, a point sitting on
/// a camera center, a singular normal matrix.
class DegenerateGeometryError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver hit its iteration cap. Carries the last iterate so the
/// caller can still inspect it.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, Eigen::Vector2d last_iterate)
      : Error(what), last_iterate_(std::move(last_iterate)) {}

  const Eigen::Vector2d& last_iterate() const noexcept { return last_iterate_; }

 private:
  Eigen::Vector2d last_iterate_;
};

/// A landmark cannot be seen from the camera (behind it or outside the FOV).
class NotVisibleError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace crowdmap
