#include "cem/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cem {

namespace {

std::vector<std::size_t> iota_index(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

bool rows_equal(std::span<const double> a, std::span<const double> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

// Label weights for the negative phase: softmax probabilities (exact
// expectation) or one-hot draws.
Matrix label_weights(const Tensor& logits, LabelMode mode, Rng* rng) {
  Tensor probs = softmax(Tensor::constant(logits.shape(), {logits.values().begin(),
                                                           logits.values().end()}));
  Matrix q = probs.to_matrix();
  if (mode == LabelMode::kModelSoft) return q;
  if (rng == nullptr) throw ContractError("MODEL_SAMPLE label mode needs an rng");
  Matrix onehot(q.rows, q.cols, 0.0);
  for (std::size_t i = 0; i < q.rows; ++i) {
    std::discrete_distribution<std::size_t> draw(q.row(i).begin(), q.row(i).end());
    onehot(i, draw(*rng)) = 1.0;
  }
  return onehot;
}

// sum_ij a_ij * w_ij / denom with w held constant.
Tensor weighted_sum(const Tensor& a, const Matrix& w, double denom) {
  return scale(sum(mul(a, Tensor::from_matrix(w))), 1.0 / denom);
}

void require_batch(const char* op, const PCemModel& model, const LabeledBatch& batch,
                   const Matrix& other) {
  if (other.rows != batch.size() || other.cols != model.input_dim()) {
    throw ShapeError(op, Shape{batch.inputs.rows, batch.inputs.cols},
                     Shape{other.rows, other.cols});
  }
}

}  // namespace

// ---- batches -------------------------------------------------------------------------

LabeledBatch::LabeledBatch(Matrix x, std::vector<std::size_t> y)
    : inputs(std::move(x)), labels(std::move(y)) {
  if (inputs.rows == 0) throw ContractError("LabeledBatch: empty batch");
  if (labels.size() != inputs.rows) {
    throw ContractError("LabeledBatch: " + std::to_string(inputs.rows) + " inputs but " +
                        std::to_string(labels.size()) + " labels");
  }
}

PairBatch::PairBatch(Matrix a, Matrix p, Matrix n, std::size_t k)
    : anchors(std::move(a)), positives(std::move(p)), negatives(std::move(n)), k_neg(k) {
  if (k_neg == 0) throw ContractError("PairBatch: K_neg must be >= 1");
  if (anchors.rows == 0) throw ContractError("PairBatch: empty batch");
  if (positives.rows != anchors.rows || positives.cols != anchors.cols) {
    throw ShapeError("PairBatch", Shape{anchors.rows, anchors.cols},
                     Shape{positives.rows, positives.cols});
  }
  if (negatives.rows != anchors.rows * k_neg || negatives.cols != anchors.cols) {
    throw ShapeError("PairBatch", Shape{anchors.rows * k_neg, anchors.cols},
                     Shape{negatives.rows, negatives.cols});
  }
  for (std::size_t i = 0; i < anchors.rows; ++i) {
    bool found = false;
    for (std::size_t k = 0; k < k_neg && !found; ++k) {
      found = rows_equal(negatives.row(i * k_neg + k), positives.row(i));
    }
    if (!found) {
      throw ContractError("PairBatch: positive " + std::to_string(i) +
                          " is missing from its negative list");
    }
  }
}

PairBatch PairBatch::with_positive_first(Matrix anchors, Matrix positives, const Matrix& others) {
  const std::size_t n = anchors.rows;
  if (n == 0 || others.rows % n != 0) {
    throw ShapeError("PairBatch::with_positive_first", Shape{anchors.rows, anchors.cols},
                     Shape{others.rows, others.cols});
  }
  const std::size_t extra = others.rows / n;
  const std::size_t k = extra + 1;
  Matrix neg(n * k, anchors.cols);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(positives.row(i).begin(), positives.row(i).end(), neg.row(i * k).begin());
    for (std::size_t e = 0; e < extra; ++e) {
      auto src = others.row(i * extra + e);
      std::copy(src.begin(), src.end(), neg.row(i * k + 1 + e).begin());
    }
  }
  return PairBatch(std::move(anchors), std::move(positives), std::move(neg), k);
}

PairBatch PairBatch::in_batch(Matrix anchors, Matrix positives) {
  const std::size_t n = anchors.rows;
  Matrix others(n * (n - 1 == 0 ? 0 : n - 1), anchors.cols);
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      std::copy(positives.row(j).begin(), positives.row(j).end(), others.row(r++).begin());
    }
  return with_positive_first(std::move(anchors), std::move(positives), others);
}

Matrix PairBatch::negatives_of(std::size_t i) const {
  Matrix out(k_neg, negatives.cols);
  for (std::size_t k = 0; k < k_neg; ++k) {
    auto src = negatives.row(i * k_neg + k);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

// ---- GradEstimate --------------------------------------------------------------------

void GradEstimate::add(const std::string& name, std::vector<double> values) {
  entries_.emplace_back(name, std::move(values));
}

const std::vector<double>& GradEstimate::at(const std::string& name) const {
  for (const auto& [n, v] : entries_)
    if (n == name) return v;
  throw ContractError("GradEstimate: no parameter named " + name);
}

bool GradEstimate::matches_layout(const GradEstimate& other) const {
  if (entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first ||
        entries_[i].second.size() != other.entries_[i].second.size()) {
      return false;
    }
  }
  return true;
}

double GradEstimate::max_abs() const {
  double m = 0.0;
  for (const auto& [_, v] : entries_)
    for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

GradEstimate& GradEstimate::operator+=(const GradEstimate& other) {
  if (!matches_layout(other)) throw ContractError("GradEstimate: layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i)
    for (std::size_t j = 0; j < entries_[i].second.size(); ++j)
      entries_[i].second[j] += other.entries_[i].second[j];
  return *this;
}

GradEstimate& GradEstimate::operator-=(const GradEstimate& other) {
  if (!matches_layout(other)) throw ContractError("GradEstimate: layout mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i)
    for (std::size_t j = 0; j < entries_[i].second.size(); ++j)
      entries_[i].second[j] -= other.entries_[i].second[j];
  return *this;
}

GradEstimate GradEstimate::operator-() const {
  GradEstimate out = *this;
  for (auto& [_, v] : out.entries_)
    for (double& x : v) x = -x;
  return out;
}

std::vector<double> GradEstimate::flat() const {
  std::vector<double> out;
  for (const auto& [_, v] : entries_) out.insert(out.end(), v.begin(), v.end());
  return out;
}

GradEstimate param_grad(const std::vector<std::pair<std::string, Tensor>>& params,
                        const Tensor& root) {
  std::vector<Tensor> wrt;
  wrt.reserve(params.size());
  for (const auto& [_, t] : params) wrt.push_back(t);
  auto grads = gradients(root, wrt);
  GradEstimate out;
  for (std::size_t i = 0; i < params.size(); ++i) out.add(params[i].first, std::move(grads[i]));
  return out;
}

// ---- supervised losses ---------------------------------------------------------------

Tensor ce_loss(const PCemModel& model, const Tensor& inputs, std::span<const std::size_t> labels) {
  Tensor logits = model.logits(inputs);
  for (std::size_t y : labels) {
    if (y >= model.num_classes()) {
      throw ContractError("ce_loss: label " + std::to_string(y) + " out of range");
    }
  }
  return mean(sub(logsumexp(logits), pick(logits, labels)));
}

Tensor ce_loss(const PCemModel& model, const LabeledBatch& batch) {
  return ce_loss(model, Tensor::from_matrix(batch.inputs), batch.labels);
}

Matrix pgd_attack(const LogitsFn& logits, const Matrix& inputs,
                  std::span<const std::size_t> labels, const SamplerConfig& attack,
                  std::uint64_t rng_seed) {
  attack.validate();
  Chain chain = Chain::start(inputs, rng_seed);
  for (std::size_t k = 0; k < attack.k_steps; ++k) {
    Tensor x = Tensor::from_matrix(chain.state, true);
    Tensor z = logits(x);
    Tensor objective = sub(sum(logsumexp(z)), sum(pick(z, labels)));
    Matrix g(chain.state.rows, chain.state.cols, gradient(objective, x));
    apply_update(chain, g, attack, "pgd_attack");
  }
  return std::move(chain.state);
}

Matrix pgd_attack(const PCemModel& model, const LabeledBatch& batch, const SamplerConfig& attack,
                  std::uint64_t rng_seed) {
  if (attack.rule != Rule::kPgd) {
    throw ContractError("pgd_attack: attack rule must be pgd, got " + to_string(attack.rule));
  }
  attack.validate();
  Chain chain = Chain::start(batch.inputs, rng_seed);
  for (std::size_t k = 0; k < attack.k_steps; ++k) pgd_step(model, chain, batch.labels, attack);
  return std::move(chain.state);
}

Tensor robust_ce_loss(const PCemModel& model, const LabeledBatch& batch,
                      const SamplerConfig& attack, std::uint64_t rng_seed) {
  Matrix adversarial = pgd_attack(model, batch, attack, rng_seed);
  return ce_loss(model, Tensor::from_matrix(adversarial), batch.labels);
}

Tensor trades_kl(const PCemModel& model, const Tensor& inputs, const Tensor& adversarial) {
  if (inputs.shape() != adversarial.shape()) {
    throw ShapeError("trades_kl", inputs.shape(), adversarial.shape());
  }
  Tensor z = model.logits(inputs);
  Tensor z_hat = model.logits(adversarial);
  // KL(p_hat || p) = sum_k p_hat_k (z_hat_k - z_k) - lse(z_hat) + lse(z)
  Tensor cross = row_sum(mul(softmax(z_hat), sub(z_hat, z)));
  return mean(add(sub(cross, logsumexp(z_hat)), logsumexp(z)));
}

Tensor cr_loss(const PCemModel& model, const LabeledBatch& batch, const Tensor& adversarial) {
  Tensor f_nat = pick(model.logits(Tensor::from_matrix(batch.inputs)), batch.labels);
  Tensor f_adv = pick(model.logits(adversarial), batch.labels);
  return mean(square(sub(f_nat, f_adv)));
}

// ---- unsupervised losses ---------------------------------------------------------------

Tensor infonce_loss(const NPCemModel& model, const Tensor& anchors, const PairBatch& batch) {
  const std::size_t n = batch.size(), k = batch.k_neg;
  if (anchors.rank() != 2 || anchors.rows() != n) {
    throw ShapeError("infonce_loss", anchors.shape(), Shape{n, batch.anchors.cols});
  }
  Tensor g_anchor = model.features(anchors);
  Tensor g_pos = model.features(Tensor::from_matrix(batch.positives));
  Tensor g_neg = model.features(Tensor::from_matrix(batch.negatives));
  Tensor f_pos = rows_dot(g_anchor, g_pos);
  Tensor f_neg = reshape(rows_dot(repeat_rows(g_anchor, k), g_neg), {n, k});
  return mean(sub(logsumexp(f_neg), f_pos));
}

Tensor infonce_loss(const NPCemModel& model, const PairBatch& batch) {
  return infonce_loss(model, Tensor::from_matrix(batch.anchors), batch);
}

Tensor pooled_infonce_loss(const NPCemModel& model, const Tensor& anchors, const Matrix& pool) {
  const std::size_t n = anchors.rows();
  if (pool.rows < n) {
    throw ShapeError("pooled_infonce_loss", anchors.shape(), Shape{pool.rows, pool.cols});
  }
  Tensor g_anchor = model.features(anchors);
  Tensor g_pool = model.features(Tensor::from_matrix(pool));
  Tensor sim = matmul(g_anchor, transpose(g_pool));
  const auto diag = iota_index(n);
  return mean(sub(logsumexp(sim), pick(sim, diag)));
}

Tensor adv_infonce_loss(const NPCemModel& model, const Matrix& adversarial,
                        const Matrix& positives, const Matrix& negatives, std::size_t k_neg) {
  PairBatch batch(adversarial, positives, negatives, k_neg);
  return infonce_loss(model, batch);
}

Tensor ucr_loss(const NPCemModel& model, const Tensor& inputs, const Tensor& positives,
                const Tensor& adversarial) {
  if (inputs.shape() != adversarial.shape() || inputs.shape() != positives.shape()) {
    throw ShapeError("ucr_loss", inputs.shape(), adversarial.shape());
  }
  Tensor g_pos = model.features(positives);
  Tensor f_nat = rows_dot(model.features(inputs), g_pos);
  Tensor f_adv = rows_dot(model.features(adversarial), g_pos);
  return mean(square(sub(f_nat, f_adv)));
}

Matrix unsup_pgd_attack(const NPCemModel& model, const Matrix& anchors, const Matrix& positives,
                        const Matrix& negatives, const SamplerConfig& attack,
                        std::uint64_t rng_seed) {
  attack.validate();
  Chain chain = Chain::start(anchors, rng_seed);
  for (std::size_t k = 0; k < attack.k_steps; ++k) {
    unsup_pgd_step(model, chain, positives, negatives, attack);
  }
  return std::move(chain.state);
}

GradEstimate full_batch_infonce_grad(const NPCemModel& model, const Matrix& anchors,
                                     const Matrix& positives) {
  if (anchors.rows > kFullBatchLimit) {
    throw ContractError("full_batch_infonce_grad: " + std::to_string(anchors.rows) +
                        " points exceeds the oracle limit of " +
                        std::to_string(kFullBatchLimit));
  }
  if (anchors.rows != positives.rows) {
    throw ShapeError("full_batch_infonce_grad", Shape{anchors.rows, anchors.cols},
                     Shape{positives.rows, positives.cols});
  }
  // The log(1/M) normaliser is constant in theta and drops out.
  Tensor loss = pooled_infonce_loss(model, Tensor::from_matrix(anchors), positives);
  return param_grad(model.parameters(), neg(loss));
}

GradEstimate full_batch_infonce_grad(const NPCemModel& model, const Dataset2D& data,
                                     const AugmentationSet& augmentations, Rng& rng) {
  if (data.size() > kFullBatchLimit) {
    throw ContractError("full_batch_infonce_grad: dataset too large for the exact oracle");
  }
  Matrix positives = augment_rows(data.points, augmentations, rng);
  return full_batch_infonce_grad(model, data.points, positives);
}

// ---- likelihood gradients ----------------------------------------------------------------

GradEstimate pcem_ll_grad(const PCemModel& model, const LabeledBatch& batch,
                          const Matrix& negatives, LabelMode mode, Rng* rng) {
  if (negatives.rows == 0 || negatives.cols != model.input_dim()) {
    throw ShapeError("pcem_ll_grad", Shape{batch.inputs.rows, batch.inputs.cols},
                     Shape{negatives.rows, negatives.cols});
  }
  Tensor positive = mean(pick(model.logits(Tensor::from_matrix(batch.inputs)), batch.labels));
  Tensor neg_logits = model.logits(Tensor::from_matrix(negatives));
  Matrix q = label_weights(neg_logits, mode, rng);
  Tensor negative = weighted_sum(neg_logits, q, static_cast<double>(negatives.rows));
  return param_grad(model.parameters(), sub(positive, negative));
}

GradEstimate pcem_consistency_grad(const PCemModel& model, const LabeledBatch& batch,
                                   const Matrix& adversarial) {
  require_batch("pcem_consistency_grad", model, batch, adversarial);
  Tensor f_nat = mean(pick(model.logits(Tensor::from_matrix(batch.inputs)), batch.labels));
  Tensor f_adv = mean(pick(model.logits(Tensor::from_matrix(adversarial)), batch.labels));
  return param_grad(model.parameters(), sub(f_nat, f_adv));
}

GradEstimate pcem_contrastive_grad(const PCemModel& model, const LabeledBatch& batch,
                                   const Matrix& adversarial, LabelMode mode, Rng* rng) {
  require_batch("pcem_contrastive_grad", model, batch, adversarial);
  Tensor adv_logits = model.logits(Tensor::from_matrix(adversarial));
  Tensor f_adv = mean(pick(adv_logits, batch.labels));
  Matrix q = label_weights(adv_logits, mode, rng);
  Tensor negative = weighted_sum(adv_logits, q, static_cast<double>(adversarial.rows));
  return param_grad(model.parameters(), sub(f_adv, negative));
}

Matrix importance_weights(const NPCemModel& model, const Matrix& anchors, const Matrix& pool) {
  if (pool.rows == 0) throw ContractError("importance_weights: empty pool");
  Tensor sim = matmul(model.features(Tensor::from_matrix(anchors)),
                      transpose(model.features(Tensor::from_matrix(pool))));
  Matrix w = softmax(Tensor::constant(sim.shape(), {sim.values().begin(), sim.values().end()}))
                 .to_matrix();
  for (double& v : w.data) v *= static_cast<double>(pool.rows);
  return w;
}

GradEstimate npcem_ll_grad(const NPCemModel& model, const Matrix& anchors,
                           const Matrix& positives, const Matrix& negative_anchors,
                           const Matrix& negative_pool) {
  if (anchors.rows != positives.rows || anchors.rows == 0) {
    throw ShapeError("npcem_ll_grad", Shape{anchors.rows, anchors.cols},
                     Shape{positives.rows, positives.cols});
  }
  Tensor positive = mean(rows_dot(model.features(Tensor::from_matrix(anchors)),
                                  model.features(Tensor::from_matrix(positives))));
  Matrix w = importance_weights(model, negative_anchors, negative_pool);
  Tensor sim = matmul(model.features(Tensor::from_matrix(negative_anchors)),
                      transpose(model.features(Tensor::from_matrix(negative_pool))));
  Tensor negative = weighted_sum(
      sim, w, static_cast<double>(negative_anchors.rows * negative_pool.rows));
  return param_grad(model.parameters(), sub(positive, negative));
}

GradEstimate npcem_contrastive_grad(const NPCemModel& model, const Matrix& adversarial,
                                    const Matrix& positives, const Matrix& negative_pool) {
  if (adversarial.rows != positives.rows || adversarial.rows == 0) {
    throw ShapeError("npcem_contrastive_grad", Shape{adversarial.rows, adversarial.cols},
                     Shape{positives.rows, positives.cols});
  }
  Tensor g_adv = model.features(Tensor::from_matrix(adversarial));
  Tensor positive = mean(rows_dot(g_adv, model.features(Tensor::from_matrix(positives))));
  Matrix w = importance_weights(model, adversarial, negative_pool);
  Tensor sim = matmul(g_adv, transpose(model.features(Tensor::from_matrix(negative_pool))));
  Tensor negative =
      weighted_sum(sim, w, static_cast<double>(adversarial.rows * negative_pool.rows));
  return param_grad(model.parameters(), sub(positive, negative));
}

}  // namespace cem
