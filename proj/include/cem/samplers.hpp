#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cem/models.hpp"
#include "cem/synthetic.hpp"

namespace cem {

enum class Rule { kPgd, kLangevin, kTa, kCs, kRcs, kUnsupLangevin, kUnsupPgd, kMaxEnt };

std::string to_string(Rule rule);
Rule parse_rule(const std::string& name);
bool is_supervised(Rule rule);

// Projected chain x <- Proj_{|x - x0| <= beta}[x + alpha * g + eta * eps].
struct SamplerConfig {
  double alpha = 0.1;
  double beta = std::numeric_limits<double>::infinity();
  double eta = 0.0;
  std::size_t k_steps = 0;
  Rule rule = Rule::kLangevin;
  double anneal = 1.0;  // eta_k = eta * anneal^k
  bool normalize_gradient = false;
  std::size_t trajectory_stride = 0;  // 0 disables trajectory recording

  void validate() const;
  double eta_at(std::size_t step) const;

  // Supervised ResNet50 row: alpha 1, beta 6, eta 0.01, 20 steps (RCS).
  static SamplerConfig supervised_defaults();
  // Unsupervised rows: alpha 7, beta inf, eta 0, 10 (ResNet18) or 50 (ResNet50)
  // steps (MaxEnt).
  static SamplerConfig unsupervised_defaults(std::size_t k_steps = 10);
};

// Batch of N chains. Each chain owns its RNG stream so results do not depend
// on how chains are grouped.
struct Chain {
  Matrix state;
  Matrix origin;
  std::size_t step_index = 0;
  std::uint64_t rng_seed = 0;
  std::vector<Rng> rngs;
  std::vector<std::normal_distribution<double>> normals;

  static Chain start(Matrix seeds, std::uint64_t rng_seed);
  std::size_t size() const { return state.rows; }
};

// ---- update directions (gradients only; no step size, noise or projection) ---

// d/dx sum_i logsumexp_k f(x_i, k)
Matrix lse_drift(const PCemModel& model, const Matrix& x);
// d/dx sum_i f(x_i, y_i)
Matrix label_drift(const PCemModel& model, const Matrix& x,
                   std::span<const std::size_t> labels);
// Direction g for PGD / LANGEVIN / TA / CS / RCS.
Matrix supervised_direction(const PCemModel& model, const Matrix& x, Rule rule,
                            std::span<const std::size_t> labels);
// d/dx sum_i logsumexp_k f(x_i, neg_k), minus d/dx sum_i f(x_i, pos_i) when
// positives are given.
Matrix unsup_direction(const NPCemModel& model, const Matrix& x, const Matrix& negatives,
                       const Matrix* positives);
// -d/dx S with S = sum_i logsumexp_j f(x_i, x_j); couples every row.
Matrix maxent_direction(const NPCemModel& model, const Matrix& x);

// ---- single steps --------------------------------------------------------------

Chain& pgd_step(const PCemModel& model, Chain& chain, std::span<const std::size_t> labels,
                const SamplerConfig& config);
Chain& langevin_step_pcem(const PCemModel& model, Chain& chain, const SamplerConfig& config);
Chain& ta_step(const PCemModel& model, Chain& chain, std::span<const std::size_t> targets,
               const SamplerConfig& config);
Chain& cs_step(const PCemModel& model, Chain& chain, std::span<const std::size_t> targets,
               const SamplerConfig& config);
Chain& rcs_step(const PCemModel& model, Chain& chain, std::span<const std::size_t> targets,
                const SamplerConfig& config);
Chain& unsup_langevin_step(const NPCemModel& model, Chain& chain, const Matrix& negatives,
                           const SamplerConfig& config);
Chain& unsup_pgd_step(const NPCemModel& model, Chain& chain, const Matrix& positives,
                      const Matrix& negatives, const SamplerConfig& config);
Chain& maxent_step(const NPCemModel& model, Chain& chain, const SamplerConfig& config);

// Applies x <- Proj[x + alpha * direction + eta_k * eps] to every chain and
// advances the step counter. Shared by all rules and by custom drifts.
Chain& apply_update(Chain& chain, const Matrix& direction, const SamplerConfig& config,
                    const std::string& rule_name);

void project_l2(Matrix& state, const Matrix& origin, double beta);

// ---- seeds -------------------------------------------------------------------------

enum class SeedMode { kDataPoint, kFittedNormal, kClasswiseNormal, kStandardNormal };

std::string to_string(SeedMode mode);
SeedMode parse_seed_mode(const std::string& name);

struct SeedSpec {
  SeedMode mode = SeedMode::kStandardNormal;
  Matrix reference;                   // required except for STANDARD_NORMAL
  std::vector<std::size_t> labels;    // CLASSWISE_NORMAL only
  std::size_t dim = 2;                // STANDARD_NORMAL only
};

struct SeedBatch {
  Matrix points;
  std::vector<std::size_t> classes;  // intended class per seed (data labels or classwise)
  bool regularized = false;          // covariance needed the +1e-6 I ridge
};

SeedBatch init_seeds(const SeedSpec& spec, std::size_t n, Rng& rng);

// ---- chains ---------------------------------------------------------------------------

struct ChainAux {
  std::vector<std::size_t> labels;  // PGD labels or TA/CS/RCS targets
  Matrix positives;                 // UNSUP_PGD
  Matrix negatives;                 // UNSUP_LANGEVIN / UNSUP_PGD
};

struct TrajectoryFrame {
  std::size_t step;
  Matrix state;
};

struct ChainResult {
  Matrix final_state;
  std::vector<TrajectoryFrame> trajectory;
};

ChainResult run_chain(const PCemModel& model, const SamplerConfig& config, const Matrix& seeds,
                      const ChainAux& aux, std::uint64_t rng_seed);
ChainResult run_chain(const NPCemModel& model, const SamplerConfig& config, const Matrix& seeds,
                      const ChainAux& aux, std::uint64_t rng_seed);

// step_index, chain_id, x1..xn
void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryFrame>& frames);
void write_samples_csv(const std::string& path, const Matrix& samples,
                       std::span<const std::size_t> classes = {});

}  // namespace cem
