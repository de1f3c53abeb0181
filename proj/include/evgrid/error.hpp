#pragma once

#include <stdexcept>
#include <string>

namespace evgrid {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or configuration.
class ParseError : public Error {
public:
  using Error::Error;
};

/// Network is not a connected radial tree, or references unknown elements.
class TopologyError : public Error {
public:
  using Error::Error;
};

/// Power flow failed to converge (collapsed or infeasible operating point).
class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, int step = -1) : Error(what), step_(step) {}
  int step() const noexcept { return step_; }

private:
  int step_;
};

/// A dispatch window could not be made feasible even after the fallback policy.
class InfeasibleError : public Error {
public:
  using Error::Error;
};

}  // namespace evgrid
