#pragma once

#include <stdexcept>
#include <string>

namespace distill {

/// Invalid configuration or dataset specification.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Mismatched grid or tensor dimensions.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An argument outside the mathematical domain of a function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A caller violated an operation's contract (wrong label kind, etc).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A metric that is undefined for the given input (single class, no boxes).
class MetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Non-finite values produced during training or evaluation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace distill
