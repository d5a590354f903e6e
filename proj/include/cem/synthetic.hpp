#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cem/models.hpp"

namespace cem {

// Parameters sufficient to regenerate a dataset bit-for-bit.
struct GeneratorSpec {
  std::string kind;  // "gaussian_mixture", "two_moons", "two_gaussians", "csv"
  std::vector<double> params;
  std::uint64_t seed = 0;
};

struct Dataset2D {
  Matrix points;  // M x 2
  std::optional<std::vector<std::size_t>> labels;
  GeneratorSpec spec;

  std::size_t size() const { return points.rows; }
  std::size_t num_classes() const;
};

// k Gaussians with isotropic sigma, centres equally spaced on a circle of the
// given radius (centre j at angle 2*pi*j/k). Labels are mode indices.
Dataset2D make_gaussian_mixture(std::size_t k_modes, double radius, double sigma,
                                std::size_t n_per_mode, Rng& rng);
Matrix mixture_centers(std::size_t k_modes, double radius);

// Two interleaving unit half-circles: class 0 on (cos t, sin t), class 1 on
// (1 - cos t, 0.5 - sin t), t in [0, pi], plus N(0, noise^2) jitter.
Dataset2D make_two_moons(std::size_t n, double noise, Rng& rng);

// Two classes at +mean (label 0) and -mean (label 1) with per-axis standard
// deviations.
Dataset2D make_two_gaussians(std::array<double, 2> mean, std::array<double, 2> stddev,
                             std::size_t n_per_class, Rng& rng);

void write_dataset_csv(const std::string& path, const Dataset2D& data);
Dataset2D read_dataset_csv(const std::string& path);

// ---- augmentations --------------------------------------------------------------

struct AugmentationOp {
  enum class Kind { kIdentity, kGaussianJitter, kRotate, kScale };
  Kind kind = Kind::kIdentity;
  double a = 0.0;  // jitter sigma | max angle (rad) | scale lower bound
  double b = 0.0;  // scale upper bound
  bool fixed = false;  // rotate by exactly `a` instead of U(-a, a)

  static AugmentationOp identity() { return {}; }
  static AugmentationOp gaussian_jitter(double sigma);
  static AugmentationOp rotate(double max_angle);
  static AugmentationOp rotate_fixed(double angle);
  static AugmentationOp scale(double lo, double hi);

  void apply(std::span<const double> x, std::span<double> out, Rng& rng) const;
};

using AugmentationSet = std::vector<AugmentationOp>;

// {jitter(0.05), rotate(+-10 deg), scale(0.9, 1.1)}
AugmentationSet default_augmentations();

// x' = t(x) with t drawn uniformly from the set. x is returned untouched.
std::pair<std::vector<double>, std::vector<double>> augment_pair(std::span<const double> x,
                                                                 const AugmentationSet& ops,
                                                                 Rng& rng);
// Row-wise augmentation of a batch.
Matrix augment_rows(const Matrix& x, const AugmentationSet& ops, Rng& rng);

// ---- batching ------------------------------------------------------------------------

class BatchIterator {
 public:
  BatchIterator(std::size_t size, std::size_t batch_size, bool shuffle, Rng& rng);

  bool done() const { return cursor_ >= order_.size(); }
  // Indices of the next batch; the last batch may be short.
  std::vector<std::size_t> next();
  std::size_t num_batches() const;

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

BatchIterator batches(const Dataset2D& data, std::size_t batch_size, bool shuffle, Rng& rng);

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> index);
std::vector<std::size_t> gather(const std::vector<std::size_t>& v,
                                std::span<const std::size_t> index);

}  // namespace cem
