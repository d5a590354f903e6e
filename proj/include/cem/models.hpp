#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cem/tensor.hpp"

namespace cem {

using Rng = std::mt19937_64;

enum class Activation { kTanh, kRelu };

// Feature map g: R^n -> R^m as a stack of layers applied row-wise to an
// (N x n) batch. An empty stack is the identity encoder.
class Encoder {
 public:
  enum class LayerKind { kAffine, kTanh, kRelu, kSquaredNorm };

  struct Layer {
    LayerKind kind;
    Tensor weight;  // (in x out), affine only
    Tensor bias;    // (out), affine only; undefined for a bias-free map
  };

  Encoder() = default;

  static Encoder identity(std::size_t dim);
  // Hidden layers use `activation`; the output layer is linear. Weights are
  // drawn from N(0, 1/fan_in), biases start at zero.
  static Encoder mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden,
                     std::size_t feature_dim, Activation activation, Rng& rng);
  // Single affine map; `bias` may be empty.
  static Encoder linear(const Matrix& weight, std::vector<double> bias = {});
  // g(x) = |x|^2, a one-dimensional feature.
  static Encoder squared_norm(std::size_t dim);

  // Default trainable encoder: two tanh hidden layers of width 64, m = 16.
  static Encoder default_mlp(std::size_t input_dim, Rng& rng);

  Tensor forward(const Tensor& inputs) const;

  std::size_t input_dim() const { return input_dim_; }
  std::size_t feature_dim() const { return feature_dim_; }
  const std::vector<Layer>& layers() const { return layers_; }

  // Named trainable tensors: "enc.<i>.weight", "enc.<i>.bias".
  std::vector<std::pair<std::string, Tensor>> parameters() const;
  // Compact architecture string, e.g. "2|affine:2x64+b,tanh,affine:64x16+b".
  std::string architecture() const;
  static Encoder from_architecture(const std::string& arch);

  Encoder clone() const;

 private:
  std::size_t input_dim_ = 0;
  std::size_t feature_dim_ = 0;
  std::vector<Layer> layers_;
};

// Finite stand-in for the input space: points with a uniform quadrature
// weight per point.
struct GridDomain {
  Matrix points;
  double cell_weight = 1.0;

  GridDomain() = default;
  GridDomain(Matrix pts, double weight);

  // Uniform n x n grid over [lo, hi]^2 with weight ((hi - lo)/(n - 1))^2.
  static GridDomain square(double lo, double hi, std::size_t per_axis);
  // 41 x 41 over [-3, 3]^2.
  static GridDomain default_2d();
  // Uniform grid over [lo, hi] in one dimension.
  static GridDomain line(double lo, double hi, std::size_t count);
};

// Parametric CEM: f(x, y) = g(x)^T w_y with W = [w_1 ... w_K] of shape (m x K).
class PCemModel {
 public:
  PCemModel() = default;
  PCemModel(Encoder encoder, Tensor class_weights);

  static PCemModel random(Encoder encoder, std::size_t num_classes, Rng& rng);
  // Identity encoder on R^2 with W = I_2.
  static PCemModel fixture_lin();

  std::size_t num_classes() const { return class_weights_.cols(); }
  std::size_t input_dim() const { return encoder_.input_dim(); }
  const Encoder& encoder() const { return encoder_; }
  const Tensor& class_weights() const { return class_weights_; }

  // h(X) = g(X) W, shape (N x K).
  Tensor logits(const Tensor& inputs) const;

  std::vector<std::pair<std::string, Tensor>> parameters() const;
  PCemModel clone() const;

 private:
  Encoder encoder_;
  Tensor class_weights_;
};

// Non-parametric CEM: f(x, x') = g(x)^T g(x').
class NPCemModel {
 public:
  NPCemModel() = default;
  explicit NPCemModel(Encoder encoder) : encoder_(std::move(encoder)) {}

  std::size_t input_dim() const { return encoder_.input_dim(); }
  const Encoder& encoder() const { return encoder_; }
  Tensor features(const Tensor& inputs) const { return encoder_.forward(inputs); }

  std::vector<std::pair<std::string, Tensor>> parameters() const;
  NPCemModel clone() const;

 private:
  Encoder encoder_;
};

// ---- scalar queries on single inputs -----------------------------------------

Tensor energy_pcem(const PCemModel& model, const Tensor& x, std::size_t y);
double energy_pcem(const PCemModel& model, std::span<const double> x, std::size_t y);
Tensor energy_npcem(const NPCemModel& model, const Tensor& x, const Tensor& x_prime);
double energy_npcem(const NPCemModel& model, std::span<const double> x,
                    std::span<const double> x_prime);
std::vector<double> cond_label_prob(const PCemModel& model, std::span<const double> x);
Tensor marginal_score(const PCemModel& model, const Tensor& x);
double marginal_score(const PCemModel& model, std::span<const double> x);

// ---- exact grid oracles --------------------------------------------------------

struct Partition {
  double z = 0.0;
  double log_z = 0.0;
};

// Z = sum_x sum_k exp f(x, k) * cell_weight over the grid.
Partition exact_partition(const PCemModel& model, const GridDomain& grid);
// Differentiable log Z.
Tensor log_partition(const PCemModel& model, const GridDomain& grid);
// p(x, y) table, rows = grid points, cols = classes.
Matrix exact_joint_grid(const PCemModel& model, const GridDomain& grid);
// p(x) per grid point (joint table summed over classes).
std::vector<double> exact_marginal_grid(const PCemModel& model, const GridDomain& grid);

// ---- weights files -----------------------------------------------------------------

// Little-endian binary: magic "CEMW", u32 version, model kind, architecture
// string, then (name, shape, float64 values) records.
void save_weights(const std::string& path, const PCemModel& model);
void save_weights(const std::string& path, const NPCemModel& model);

enum class ModelKind : std::uint32_t { kPCem = 1, kNPCem = 2 };

struct LoadedModel {
  ModelKind kind;
  PCemModel pcem;
  NPCemModel npcem;
};

LoadedModel load_weights(const std::string& path);

}  // namespace cem
