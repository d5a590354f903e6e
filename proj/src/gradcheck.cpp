#include "cem/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cem {

Tensor finite_diff_grad(const ScalarFn& fn, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ContractError("finite_diff_grad: step h must be positive");
  std::vector<double> probe(x.values().begin(), x.values().end());
  std::vector<double> out(probe.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double origin = probe[i];
    probe[i] = origin + h;
    const double up = fn(Tensor::constant(x.shape(), probe));
    if (!std::isfinite(up)) throw OracleError(i, up);
    probe[i] = origin - h;
    const double down = fn(Tensor::constant(x.shape(), probe));
    if (!std::isfinite(down)) throw OracleError(i, down);
    probe[i] = origin;
    out[i] = (up - down) / (2.0 * h);
  }
  return Tensor::constant(x.shape(), std::move(out));
}

GradComparison compare_gradients(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("compare_gradients", Shape{a.size()}, Shape{b.size()});
  }
  GradComparison cmp;
  double scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cmp.max_abs = std::max(cmp.max_abs, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  cmp.max_rel = cmp.max_abs == 0.0 ? 0.0 : cmp.max_abs / scale;
  return cmp;
}

}  // namespace cem
