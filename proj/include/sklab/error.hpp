#pragma once

#include <stdexcept>
#include <string>

namespace sklab {

// Argument outside the domain an operation is defined on.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A numerical procedure failed: non-convergence, non-finite values, a
// degenerate Gram-Schmidt step, or a violated consistency check.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when the Gram-Schmidt denominator of a recursion step vanishes.
class DegenerateStateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Exhaustive enumeration requested for a system that is too large.
class EnumerationLimitError : public DomainError {
 public:
  using DomainError::DomainError;
};

}  // namespace sklab
