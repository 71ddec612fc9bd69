#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace crgrf {

// Input does not match the expected layout (missing columns, bad flags).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A single data row violates a domain constraint.
class ValidationError : public std::runtime_error {
 public:
  ValidationError(std::size_t row, const std::string& what)
      : std::runtime_error("row " + std::to_string(row) + ": " + what), row_(row) {}

  // 1-based data row index (the header is row 0).
  std::size_t row() const noexcept { return row_; }

 private:
  std::size_t row_;
};

// Analysis settings are inconsistent with the data or with each other.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Failures raised while estimating curves, weights, forests or effects.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Denominator of an inverse-probability weight reached zero.
class PositivityError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

// A node or neighbourhood holds a single treatment arm.
class DegenerateError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

// Argument outside the mathematical domain of a function.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace crgrf
