#pragma once

#include <functional>
#include <vector>

#include "cem/tensor.hpp"

namespace cem {

using ScalarFn = std::function<double(const Tensor&)>;

// Central differences (fn(x + h e_i) - fn(x - h e_i)) / 2h per coordinate.
// fn receives a constant tensor with the shape of x. Throws OracleError naming
// the coordinate when fn returns a non-finite value.
Tensor finite_diff_grad(const ScalarFn& fn, const Tensor& x, double h = 1e-5);

struct GradComparison {
  double max_abs = 0.0;
  double max_rel = 0.0;  // max_abs / max(|a|_inf, |b|_inf), 0 when both vanish
};

GradComparison compare_gradients(std::span<const double> a, std::span<const double> b);

}  // namespace cem
