#pragma once

#include <stdexcept>
#include <string>

namespace odecheck {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite state or stage value produced while integrating.
class SolverFailure : public Error {
 public:
  using Error::Error;
};

/// Adaptive solver exhausted its per-interval step budget.
class MaxStepsExceeded : public SolverFailure {
 public:
  using SolverFailure::SolverFailure;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class DegenerateChains : public Error {
 public:
  using Error::Error;
};

class DegenerateTail : public Error {
 public:
  using Error::Error;
};

class AllZeroWeights : public Error {
 public:
  using Error::Error;
};

class InitializationFailure : public Error {
 public:
  using Error::Error;
};

class LadderTooShort : public Error {
 public:
  using Error::Error;
};

class VerdictMismatch : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace odecheck
