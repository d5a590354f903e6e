#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace cem {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

// Raised when operand shapes do not conform for an op.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& detail);
};

// Raised when an op is evaluated outside its mathematical domain (log of a
// non-positive value, for instance).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Violated precondition on an API call.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The finite-difference oracle hit a non-finite function value.
class OracleError : public std::runtime_error {
 public:
  OracleError(std::size_t coordinate, double value);
  std::size_t coordinate() const { return coordinate_; }

 private:
  std::size_t coordinate_;
};

// A sampling chain produced a non-finite gradient.
class SamplerError : public std::runtime_error {
 public:
  SamplerError(const std::string& rule, std::size_t step);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

}  // namespace cem
