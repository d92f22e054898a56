#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace pcgf {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid or inconsistent user-supplied settings.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// Input outside the mathematical domain of an operation (e.g. log of a
/// nonpositive value in a power-law fit).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A matrix that should be PSD has a significantly negative eigenvalue.
class NotPsdError : public Error {
 public:
  NotPsdError(const std::string& what, double eigenvalue)
      : Error(what), eigenvalue_(eigenvalue) {}
  double eigenvalue() const noexcept { return eigenvalue_; }

 private:
  double eigenvalue_;
};

/// A simulated state became non-finite.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double time, std::size_t step)
      : Error(what), time_(time), step_(step) {}
  double time() const noexcept { return time_; }
  std::size_t step() const noexcept { return step_; }

 private:
  double time_;
  std::size_t step_;
};

/// An iterative numerical procedure ran out of budget.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

/// Two trajectories that must share a time grid do not.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

}  // namespace pcgf
