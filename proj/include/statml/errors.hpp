#pragma once

#include <stdexcept>
#include <string>

namespace statml {

/// Malformed input: bad sizes, out-of-range parameters, invalid distributions.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// Mathematically undefined request (zero proposal density, support mismatch, ...).
class DomainError : public std::domain_error {
 public:
  explicit DomainError(const std::string& what) : std::domain_error(what) {}
};

/// Exact enumeration requested beyond the supported size.
class CapacityError : public std::length_error {
 public:
  explicit CapacityError(const std::string& what) : std::length_error(what) {}
};

/// Boosting could not build a reweighted distribution (empty side of a split).
class DegenerateSplitError : public std::runtime_error {
 public:
  explicit DegenerateSplitError(const std::string& what) : std::runtime_error(what) {}
};

/// Iterative procedure failed to converge or a numerical consistency check tripped.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

class ConvergenceError : public NumericalError {
 public:
  explicit ConvergenceError(const std::string& what) : NumericalError(what) {}
};

}  // namespace statml
