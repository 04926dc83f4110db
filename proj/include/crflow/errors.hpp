#pragma once

#include <stdexcept>
#include <string>

namespace crflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

// A field took a nonpositive value where positivity is a precondition.
class PositivityError : public Error {
 public:
  PositivityError(const std::string& what, std::size_t node, double value)
      : Error(what), node_(node), value_(value) {}
  std::size_t node() const { return node_; }
  double value() const { return value_; }

 private:
  std::size_t node_;
  double value_;
};

class ResourceError : public Error {
 public:
  using Error::Error;
};

class ConstructionError : public Error {
 public:
  using Error::Error;
};

class NumericalHealthError : public Error {
 public:
  using Error::Error;
};

class ResolutionError : public Error {
 public:
  using Error::Error;
};

class SingularityError : public Error {
 public:
  using Error::Error;
};

class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class DegenerateBalancingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

}  // namespace crflow
