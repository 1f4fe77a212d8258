#pragma once

#include <stdexcept>
#include <string>

namespace i2i {

// Error hierarchy. The CLI maps each family onto a stable exit code.

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a training loss becomes NaN/Inf. `term()` names the offender.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& term, long step)
      : std::runtime_error("non-finite loss term '" + term + "' at step " + std::to_string(step)),
        term_(term),
        step_(step) {}
  const std::string& term() const { return term_; }
  long step() const { return step_; }

 private:
  std::string term_;
  long step_;
};

class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FingerprintError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace i2i
