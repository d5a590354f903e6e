#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "cem/models.hpp"
#include "cem/samplers.hpp"

namespace cem {

struct LabeledBatch {
  Matrix inputs;                    // N x n
  std::vector<std::size_t> labels;  // N

  LabeledBatch() = default;
  LabeledBatch(Matrix x, std::vector<std::size_t> y);
  std::size_t size() const { return inputs.rows; }
};

// Anchors x_i, positives x'_i and K_neg negatives per anchor, stored as
// (N * K_neg) x n with anchor i owning rows [i*K_neg, (i+1)*K_neg).
struct PairBatch {
  Matrix anchors;
  Matrix positives;
  Matrix negatives;
  std::size_t k_neg = 0;

  // Validates shapes and that every positive occurs in its negative list.
  PairBatch(Matrix anchors, Matrix positives, Matrix negatives, std::size_t k_neg);
  // Negatives for anchor i are x'_i followed by `others` rows
  // [i*K, (i+1)*K) where K = others.rows / N.
  static PairBatch with_positive_first(Matrix anchors, Matrix positives, const Matrix& others);
  // Every anchor contrasts against all positives in the batch, its own first.
  static PairBatch in_batch(Matrix anchors, Matrix positives);

  std::size_t size() const { return anchors.rows; }
  Matrix negatives_of(std::size_t i) const;
};

// Per-parameter gradients keyed by parameter name, in model order.
class GradEstimate {
 public:
  GradEstimate() = default;

  void add(const std::string& name, std::vector<double> values);
  const std::vector<double>& at(const std::string& name) const;
  const std::vector<std::pair<std::string, std::vector<double>>>& entries() const {
    return entries_;
  }
  bool matches_layout(const GradEstimate& other) const;
  double max_abs() const;

  GradEstimate& operator+=(const GradEstimate& other);
  GradEstimate& operator-=(const GradEstimate& other);
  GradEstimate operator-() const;
  friend GradEstimate operator+(GradEstimate a, const GradEstimate& b) { return a += b; }
  friend GradEstimate operator-(GradEstimate a, const GradEstimate& b) { return a -= b; }

  // Flattened values in entry order.
  std::vector<double> flat() const;

 private:
  std::vector<std::pair<std::string, std::vector<double>>> entries_;
};

// d(root)/d(theta) for every trainable parameter of the model.
GradEstimate param_grad(const std::vector<std::pair<std::string, Tensor>>& params,
                        const Tensor& root);

// ---- supervised losses ----------------------------------------------------------------

// mean_i -log p(y_i | x_i)
Tensor ce_loss(const PCemModel& model, const Tensor& inputs, std::span<const std::size_t> labels);
Tensor ce_loss(const PCemModel& model, const LabeledBatch& batch);

// Runs the PGD chain from each data point (within the beta-ball) and returns
// the adversarial inputs. The attack is not differentiated through.
Matrix pgd_attack(const PCemModel& model, const LabeledBatch& batch, const SamplerConfig& attack,
                  std::uint64_t rng_seed = 0);
// Generic PGD against any differentiable logits function.
using LogitsFn = std::function<Tensor(const Tensor&)>;
Matrix pgd_attack(const LogitsFn& logits, const Matrix& inputs,
                  std::span<const std::size_t> labels, const SamplerConfig& attack,
                  std::uint64_t rng_seed = 0);
// ce_loss evaluated at the PGD adversarial examples.
Tensor robust_ce_loss(const PCemModel& model, const LabeledBatch& batch,
                      const SamplerConfig& attack, std::uint64_t rng_seed = 0);

// mean_i KL(p(. | x_hat_i) || p(. | x_i))
Tensor trades_kl(const PCemModel& model, const Tensor& inputs, const Tensor& adversarial);
// mean_i (f(x_i, y_i) - f(x_hat_i, y_i))^2
Tensor cr_loss(const PCemModel& model, const LabeledBatch& batch, const Tensor& adversarial);

// ---- unsupervised losses ----------------------------------------------------------------

// mean_i -log[exp f(x_i, x'_i) / sum_k exp f(x_i, xhat'_ik)]
Tensor infonce_loss(const NPCemModel& model, const PairBatch& batch);
// InfoNCE with caller-supplied anchors (the batch anchors are ignored).
Tensor infonce_loss(const NPCemModel& model, const Tensor& anchors, const PairBatch& batch);
// Each anchor i contrasts against every row of `pool`; pool row i is the
// positive of anchor i. pool.rows may exceed anchors.rows.
Tensor pooled_infonce_loss(const NPCemModel& model, const Tensor& anchors, const Matrix& pool);
// infonce_loss with anchors replaced by adversarial counterparts.
Tensor adv_infonce_loss(const NPCemModel& model, const Matrix& adversarial,
                        const Matrix& positives, const Matrix& negatives, std::size_t k_neg);
// mean_i (f(x_i, x'_i) - f(x_hat_i, x'_i))^2
Tensor ucr_loss(const NPCemModel& model, const Tensor& inputs, const Tensor& positives,
                const Tensor& adversarial);

// Unsupervised PGD chains from each anchor with its positive and the pooled
// negatives.
Matrix unsup_pgd_attack(const NPCemModel& model, const Matrix& anchors, const Matrix& positives,
                        const Matrix& negatives, const SamplerConfig& attack,
                        std::uint64_t rng_seed = 0);

// Gradient of (1/M) sum_i log[exp f(x_i, x'_i) / ((1/M) sum_j exp f(x_i, x'_j))]
// with exact sums over the finite pair set. Refuses sets above
// kFullBatchLimit points.
inline constexpr std::size_t kFullBatchLimit = 512;
GradEstimate full_batch_infonce_grad(const NPCemModel& model, const Matrix& anchors,
                                     const Matrix& positives);
GradEstimate full_batch_infonce_grad(const NPCemModel& model, const Dataset2D& data,
                                     const AugmentationSet& augmentations, Rng& rng);

// ---- likelihood gradients ---------------------------------------------------------------

enum class LabelMode { kModelSoft, kModelSample };

// Positive phase mean_i grad f(x_i, y_i) minus the negative phase
// mean_a E_{y ~ p(y | xhat_a)} grad f(xhat_a, y). MODEL_SOFT takes the label
// expectation exactly; MODEL_SAMPLE draws one label per negative from `rng`.
GradEstimate pcem_ll_grad(const PCemModel& model, const LabeledBatch& batch,
                          const Matrix& negatives, LabelMode mode, Rng* rng = nullptr);
// Paired (x_i, xhat_i): mean_i grad f(x_i, y_i) - grad f(xhat_i, y_i)
GradEstimate pcem_consistency_grad(const PCemModel& model, const LabeledBatch& batch,
                                   const Matrix& adversarial);
// Paired: mean_i grad f(xhat_i, y_i) - E_{yhat} grad f(xhat_i, yhat)
GradEstimate pcem_contrastive_grad(const PCemModel& model, const LabeledBatch& batch,
                                   const Matrix& adversarial, LabelMode mode,
                                   Rng* rng = nullptr);

// Self-normalised weights exp f(a, p) / mean_p exp f(a, p), one row per anchor.
Matrix importance_weights(const NPCemModel& model, const Matrix& anchors, const Matrix& pool);

// mean_i grad f(x_i, x'_i) minus mean_a mean_p w_ap grad f(xhat_a, xhat'_p).
GradEstimate npcem_ll_grad(const NPCemModel& model, const Matrix& anchors,
                           const Matrix& positives, const Matrix& negative_anchors,
                           const Matrix& negative_pool);
// Unsupervised contrastive gradient with paired adversarial anchors:
// mean_i [grad f(xhat_i, x'_i) - mean_p w_ip grad f(xhat_i, xhat'_p)].
GradEstimate npcem_contrastive_grad(const NPCemModel& model, const Matrix& adversarial,
                                    const Matrix& positives, const Matrix& negative_pool);

}  // namespace cem
