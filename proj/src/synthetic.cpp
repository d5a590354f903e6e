#include "cem/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace cem {

std::size_t Dataset2D::num_classes() const {
  if (!labels || labels->empty()) return 0;
  return *std::max_element(labels->begin(), labels->end()) + 1;
}

Matrix mixture_centers(std::size_t k_modes, double radius) {
  Matrix c(k_modes, 2);
  for (std::size_t j = 0; j < k_modes; ++j) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(j) /
                         static_cast<double>(k_modes);
    c(j, 0) = radius * std::cos(angle);
    c(j, 1) = radius * std::sin(angle);
  }
  return c;
}

Dataset2D make_gaussian_mixture(std::size_t k_modes, double radius, double sigma,
                                std::size_t n_per_mode, Rng& rng) {
  if (k_modes == 0) throw ContractError("make_gaussian_mixture: k_modes must be positive");
  if (sigma < 0.0) throw ContractError("make_gaussian_mixture: negative sigma");
  Dataset2D d;
  d.spec = {"gaussian_mixture",
            {static_cast<double>(k_modes), radius, sigma, static_cast<double>(n_per_mode)},
            0};
  const Matrix centers = mixture_centers(k_modes, radius);
  std::normal_distribution<double> noise(0.0, 1.0);
  d.points = Matrix(k_modes * n_per_mode, 2);
  std::vector<std::size_t> labels(k_modes * n_per_mode);
  for (std::size_t j = 0; j < k_modes; ++j)
    for (std::size_t i = 0; i < n_per_mode; ++i) {
      const std::size_t r = j * n_per_mode + i;
      d.points(r, 0) = centers(j, 0) + sigma * noise(rng);
      d.points(r, 1) = centers(j, 1) + sigma * noise(rng);
      labels[r] = j;
    }
  d.labels = std::move(labels);
  return d;
}

Dataset2D make_two_moons(std::size_t n, double noise, Rng& rng) {
  Dataset2D d;
  d.spec = {"two_moons", {static_cast<double>(n), noise}, 0};
  const std::size_t n_outer = n / 2;
  d.points = Matrix(n, 2);
  std::vector<std::size_t> labels(n);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
  std::normal_distribution<double> jitter(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = angle(rng);
    if (i < n_outer) {
      d.points(i, 0) = std::cos(t);
      d.points(i, 1) = std::sin(t);
      labels[i] = 0;
    } else {
      d.points(i, 0) = 1.0 - std::cos(t);
      d.points(i, 1) = 0.5 - std::sin(t);
      labels[i] = 1;
    }
    if (noise > 0.0) {
      d.points(i, 0) += noise * jitter(rng);
      d.points(i, 1) += noise * jitter(rng);
    }
  }
  d.labels = std::move(labels);
  return d;
}

Dataset2D make_two_gaussians(std::array<double, 2> mean, std::array<double, 2> stddev,
                             std::size_t n_per_class, Rng& rng) {
  Dataset2D d;
  d.spec = {"two_gaussians",
            {mean[0], mean[1], stddev[0], stddev[1], static_cast<double>(n_per_class)},
            0};
  d.points = Matrix(2 * n_per_class, 2);
  std::vector<std::size_t> labels(2 * n_per_class);
  std::normal_distribution<double> z(0.0, 1.0);
  for (std::size_t c = 0; c < 2; ++c) {
    const double sign = c == 0 ? 1.0 : -1.0;
    for (std::size_t i = 0; i < n_per_class; ++i) {
      const std::size_t r = c * n_per_class + i;
      d.points(r, 0) = sign * mean[0] + stddev[0] * z(rng);
      d.points(r, 1) = sign * mean[1] + stddev[1] * z(rng);
      labels[r] = c;
    }
  }
  d.labels = std::move(labels);
  return d;
}

void write_dataset_csv(const std::string& path, const Dataset2D& data) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "x1,x2,label\n";
  char buf[96];
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,", data.points(i, 0), data.points(i, 1));
    out << buf;
    if (data.labels) out << (*data.labels)[i];
    out << "\n";
  }
}

Dataset2D read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (line.rfind("x1,x2", 0) != 0) throw std::runtime_error(path + ": missing x1,x2 header");
  Dataset2D d;
  d.spec = {"csv", {}, 0};
  std::vector<double> values;
  std::vector<std::size_t> labels;
  bool all_labeled = true;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    try {
      values.push_back(std::stod(a));
      values.push_back(std::stod(b));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ": bad number on row " + std::to_string(row + 1));
    }
    if (!std::isfinite(values[values.size() - 1]) || !std::isfinite(values[values.size() - 2])) {
      throw std::runtime_error(path + ": non-finite value on row " + std::to_string(row + 1));
    }
    if (c.empty()) {
      all_labeled = false;
    } else {
      labels.push_back(std::stoul(c));
    }
    ++row;
  }
  d.points = Matrix(row, 2, std::move(values));
  if (all_labeled && labels.size() == row && row > 0) d.labels = std::move(labels);
  return d;
}

// ---- augmentations --------------------------------------------------------------

AugmentationOp AugmentationOp::gaussian_jitter(double sigma) {
  if (sigma < 0.0) throw ContractError("gaussian_jitter: negative sigma");
  return {Kind::kGaussianJitter, sigma, 0.0, false};
}

AugmentationOp AugmentationOp::rotate(double max_angle) {
  if (max_angle < 0.0 || max_angle > std::numbers::pi) {
    throw ContractError("rotate: max angle must lie in [0, pi]");
  }
  return {Kind::kRotate, max_angle, 0.0, false};
}

AugmentationOp AugmentationOp::rotate_fixed(double angle) {
  return {Kind::kRotate, angle, 0.0, true};
}

AugmentationOp AugmentationOp::scale(double lo, double hi) {
  if (!(lo > 0.0) || hi < lo) throw ContractError("scale: need 0 < lo <= hi");
  return {Kind::kScale, lo, hi, false};
}

void AugmentationOp::apply(std::span<const double> x, std::span<double> out, Rng& rng) const {
  std::copy(x.begin(), x.end(), out.begin());
  switch (kind) {
    case Kind::kIdentity:
      break;
    case Kind::kGaussianJitter: {
      std::normal_distribution<double> z(0.0, 1.0);
      for (double& v : out) v += a * z(rng);
      break;
    }
    case Kind::kRotate: {
      if (x.size() != 2) throw ContractError("rotate: needs 2-D inputs");
      double angle = a;
      if (!fixed) angle = std::uniform_real_distribution<double>(-a, a)(rng);
      const double c = std::cos(angle), s = std::sin(angle);
      out[0] = c * x[0] - s * x[1];
      out[1] = s * x[0] + c * x[1];
      break;
    }
    case Kind::kScale: {
      const double f = std::uniform_real_distribution<double>(a, b)(rng);
      for (double& v : out) v *= f;
      break;
    }
  }
}

AugmentationSet default_augmentations() {
  return {AugmentationOp::gaussian_jitter(0.05),
          AugmentationOp::rotate(10.0 * std::numbers::pi / 180.0),
          AugmentationOp::scale(0.9, 1.1)};
}

std::pair<std::vector<double>, std::vector<double>> augment_pair(std::span<const double> x,
                                                                 const AugmentationSet& ops,
                                                                 Rng& rng) {
  if (ops.empty()) throw ContractError("augment_pair: empty augmentation set");
  std::uniform_int_distribution<std::size_t> pick_op(0, ops.size() - 1);
  const AugmentationOp& op = ops[pick_op(rng)];
  std::vector<double> first(x.begin(), x.end());
  std::vector<double> second(x.size());
  op.apply(x, second, rng);
  return {std::move(first), std::move(second)};
}

Matrix augment_rows(const Matrix& x, const AugmentationSet& ops, Rng& rng) {
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    auto [_, view] = augment_pair(x.row(i), ops, rng);
    std::copy(view.begin(), view.end(), out.row(i).begin());
  }
  return out;
}

// ---- batching ------------------------------------------------------------------------

BatchIterator::BatchIterator(std::size_t size, std::size_t batch_size, bool shuffle, Rng& rng)
    : order_(size), batch_size_(batch_size) {
  if (batch_size == 0) throw ContractError("batches: batch_size must be positive");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle) std::shuffle(order_.begin(), order_.end(), rng);
}

std::vector<std::size_t> BatchIterator::next() {
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return out;
}

std::size_t BatchIterator::num_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

BatchIterator batches(const Dataset2D& data, std::size_t batch_size, bool shuffle, Rng& rng) {
  return BatchIterator(data.size(), batch_size, shuffle, rng);
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> index) {
  Matrix out(index.size(), m.cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    auto src = m.row(index[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::size_t> gather(const std::vector<std::size_t>& v,
                                std::span<const std::size_t> index) {
  std::vector<std::size_t> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) out[i] = v[index[i]];
  return out;
}

}  // namespace cem
