#pragma once

#include <stdexcept>
#include <string>

namespace bingham {

/// Input outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An iterative solve ran out of its iteration budget.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent on-disk data (map files, snapshots, configs).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A time integration produced non-finite values or left the feasible set.
class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bingham
