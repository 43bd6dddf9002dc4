#pragma once

#include <stdexcept>
#include <string>

namespace iclab {

/// Table dimensions disagree (policy vs. MDP, signal vs. MDP, ...).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An argument is outside its documented domain.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A constraint-set descriptor does not describe a nonempty convex set.
class DescriptorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Restricting a constraint set by expert halfspaces emptied it.
class InfeasibleRestrictionError : public DescriptorError {
 public:
  using DescriptorError::DescriptorError;
};

/// Null-space recovery received an all-zero matrix.
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid run configuration; the message names the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace iclab
