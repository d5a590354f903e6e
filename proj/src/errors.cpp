#include "cem/errors.hpp"

#include <sstream>

namespace cem {

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) out << ", ";
    out << shape[i];
  }
  out << ")";
  return out.str();
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": shape mismatch " + shape_string(a) +
                            " vs " + shape_string(b)) {}

ShapeError::ShapeError(const std::string& op, const std::string& detail)
    : std::invalid_argument(op + ": " + detail) {}

OracleError::OracleError(std::size_t coordinate, double value)
    : std::runtime_error("finite_diff_grad: non-finite function value " +
                         std::to_string(value) + " when probing coordinate " +
                         std::to_string(coordinate)),
      coordinate_(coordinate) {}

SamplerError::SamplerError(const std::string& rule, std::size_t step)
    : std::runtime_error(rule + ": non-finite gradient at step " +
                         std::to_string(step)),
      step_(step) {}

}  // namespace cem
