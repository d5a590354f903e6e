#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cem/objectives.hpp"

namespace cem {

struct CheckReport {
  std::string name;
  double max_abs = 0.0;
  double max_rel = 0.0;
  double tolerance = 0.0;
  bool pass = false;
  std::string fixture;
  std::size_t trials = 0;
};

// Gradients smaller than this in absolute terms count as agreeing; relative
// error is meaningless once both routes are at rounding level.
inline constexpr double kAbsoluteFloor = 1e-13;

inline constexpr double kIdentityTolerance = 1e-8;
inline constexpr double kAlgebraicTolerance = 1e-10;

// Accumulates trial comparisons into a report.
class CheckAccumulator {
 public:
  CheckAccumulator(std::string name, double tolerance, std::string fixture);
  void compare(std::span<const double> a, std::span<const double> b);
  CheckReport finish() const;

 private:
  CheckReport report_;
  bool failed_ = false;
};

// ---- single-fixture checks ------------------------------------------------------------

// (a) autodiff of mean_i w_i log p(x_i) with exact log Z versus (b) the
// positive phase minus the exact grid expectation of grad lse_y f(x, y).
// `weights` (summing to 1) default to uniform over the rows of `data`.
CheckReport check_ebm_gradient(const GridDomain& grid, const PCemModel& model, const Matrix& data,
                               std::vector<double> weights = {}, double fault = 0.0);
// pcem_ll_grad with negatives = data and soft labels versus -grad ce_loss.
CheckReport check_st_equals_ce(const PCemModel& model, const LabeledBatch& batch,
                               double fault = 0.0);
// Contrastive gradient at x_hat versus -grad ce_loss(x_hat).
CheckReport check_at_equals_contrastive(const PCemModel& model, const LabeledBatch& batch,
                                        const Matrix& adversarial, double fault = 0.0);
// consistency + contrastive versus the direct likelihood gradient at x_hat.
CheckReport check_at_telescoping(const PCemModel& model, const LabeledBatch& batch,
                                 const Matrix& adversarial, double fault = 0.0);
// npcem_ll_grad with data as negatives versus full_batch_infonce_grad.
CheckReport check_infonce_equivalence(const NPCemModel& model, const Matrix& anchors,
                                      const Matrix& positives, double fault = 0.0);
// npcem_contrastive_grad at adversarial anchors versus -grad of the full-batch
// adversarial InfoNCE objective.
CheckReport check_adv_infonce_equivalence(const NPCemModel& model, const Matrix& adversarial,
                                          const Matrix& positives, double fault = 0.0);
// Importance weights average to 1 per anchor.
CheckReport check_weight_normalization(const NPCemModel& model, const Matrix& anchors,
                                       const Matrix& pool, double fault = 0.0);
// PGD = -grad log p(y|x), TA = +grad log p(y|x), RCS - CS = Langevin drift,
// CS = grad f(., y), each against an independent autodiff route.
CheckReport check_sampler_decompositions(const PCemModel& model, const Matrix& x,
                                         std::span<const std::size_t> labels, double fault = 0.0);

// ---- randomized suite --------------------------------------------------------------------

struct SuiteOptions {
  std::uint64_t seed = 2024;
  std::size_t trials = 20;
  // Perturbs the first gradient entry of one route in every check.
  double fault = 0.0;
};

std::vector<std::string> suite_check_names();
// Runs one named check over `trials` random fixtures.
CheckReport run_suite_check(const std::string& name, const SuiteOptions& options);
std::vector<CheckReport> run_suite(const std::vector<std::string>& names,
                                   const SuiteOptions& options);

std::string report_json(const std::vector<CheckReport>& reports);

// ---- statistical diagnostics and metrics --------------------------------------------

// -(1/N) sum_i log[(1/N) sum_j exp f(x_i, x_j)]; the log Z term is omitted.
double entropy_estimate(const NPCemModel& model, const Matrix& batch);

struct LangevinDiagnosticConfig {
  double alpha = 1e-3;
  std::size_t chains = 1000;
  std::size_t steps = 10000;
  std::size_t burn_in = 3000;
  std::size_t stride = 500;  // snapshot spacing after burn-in
  std::uint64_t seed = 11;
  double mean_threshold = 0.05;
  double cov_threshold = 0.1;
};

struct LangevinDiagnostic {
  std::vector<double> mean;
  Matrix covariance;
  double mean_error = 0.0;
  double cov_error = 0.0;
  CheckReport report;
};

// f(x) = -|x|^2 / 2 as a one-class P-CEM, so the Langevin target is N(0, I).
PCemModel standard_normal_fixture(std::size_t dim = 2);
LangevinDiagnostic langevin_gaussian_diagnostic(const LangevinDiagnosticConfig& config);

struct ModeCoverage {
  std::size_t covered = 0;
  std::vector<double> fractions;  // share of samples nearest each centre
  double high_quality = 0.0;      // share within 3 sigma of its nearest centre
};

ModeCoverage mode_coverage(const Matrix& samples, const Matrix& centers, double sigma,
                           double min_fraction = 0.01);

// Index of the nearest grid point for every sample.
std::vector<std::size_t> assign_to_grid(const Matrix& samples, const GridDomain& grid);
// KL(empirical grid histogram || exact model marginal), 1e-12 smoothing.
double grid_kl(const Matrix& samples, const PCemModel& model, const GridDomain& grid);
double histogram_kl(const std::vector<std::size_t>& cells, const std::vector<double>& target);

}  // namespace cem
