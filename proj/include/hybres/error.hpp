#pragma once

#include <stdexcept>
#include <string>

namespace hybres {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Malformed model or parameter input.
class InvalidInput : public Error {
  public:
    using Error::Error;
};

/// A matrix block that must be inverted is singular (isolated passive node,
/// ill-posed source partition, degenerate region boundary).
class SingularMatrix : public Error {
  public:
    using Error::Error;
};

/// The GFM voltage quadratic has a negative discriminant.
class NoRealSolution : public Error {
  public:
    using Error::Error;
};

/// The positive quadratic branch collapsed to a non-positive voltage.
class NonPhysicalRoot : public Error {
  public:
    using Error::Error;
};

/// No self-consistent algebraic solution exists at the requested point.
class NoSolution : public Error {
  public:
    using Error::Error;
};

/// Scenario file problems; `path()` names the offending key.
class ScenarioError : public Error {
  public:
    ScenarioError(std::string path, const std::string& message)
        : Error(path + ": " + message), path_(std::move(path)) {}

    [[nodiscard]] const std::string& path() const noexcept { return path_; }

  private:
    std::string path_;
};

}  // namespace hybres
