#include "cem/identity.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include <json.hpp>

#include "cem/gradcheck.hpp"

namespace cem {

namespace {

std::vector<double> with_fault(std::vector<double> v, double fault) {
  if (!v.empty()) v[0] += fault;
  return v;
}

std::vector<double> negated(std::vector<double> v) {
  for (double& x : v) x = -x;
  return v;
}

std::string describe(const char* what, std::size_t n, std::size_t dim, std::size_t k) {
  return std::string(what) + " N=" + std::to_string(n) + " dim=" + std::to_string(dim) +
         " K=" + std::to_string(k);
}

// Per-row gradient of sum_i h(x_i) with respect to the batch.
Matrix input_gradient(const Matrix& x, const std::function<Tensor(const Tensor&)>& h) {
  Tensor xt = Tensor::from_matrix(x, true);
  return Matrix(x.rows, x.cols, gradient(h(xt), xt));
}

}  // namespace

// ---- accumulator ---------------------------------------------------------------------------

CheckAccumulator::CheckAccumulator(std::string name, double tolerance, std::string fixture) {
  report_.name = std::move(name);
  report_.tolerance = tolerance;
  report_.fixture = std::move(fixture);
}

void CheckAccumulator::compare(std::span<const double> a, std::span<const double> b) {
  GradComparison c = compare_gradients(a, b);
  report_.max_abs = std::max(report_.max_abs, c.max_abs);
  report_.max_rel = std::max(report_.max_rel, c.max_rel);
  const bool ok = std::isfinite(c.max_abs) &&
                  (c.max_rel <= report_.tolerance || c.max_abs <= kAbsoluteFloor);
  failed_ = failed_ || !ok;
  ++report_.trials;
}

CheckReport CheckAccumulator::finish() const {
  CheckReport out = report_;
  out.pass = !failed_ && report_.trials > 0;
  return out;
}

// ---- single-fixture checks ------------------------------------------------------------

CheckReport check_ebm_gradient(const GridDomain& grid, const PCemModel& model, const Matrix& data,
                               std::vector<double> weights, double fault) {
  if (weights.empty()) weights.assign(data.rows, 1.0 / static_cast<double>(data.rows));
  if (weights.size() != data.rows) {
    throw ContractError("check_ebm_gradient: one weight per data row required");
  }
  const auto params = model.parameters();
  auto positive = [&] {
    return sum(mul(logsumexp(model.logits(Tensor::from_matrix(data))),
                   Tensor::vector(weights)));
  };
  GradEstimate direct = param_grad(params, sub(positive(), log_partition(model, grid)));

  const std::vector<double> p_model = exact_marginal_grid(model, grid);
  Tensor negative = sum(mul(logsumexp(model.logits(Tensor::from_matrix(grid.points))),
                            Tensor::vector(p_model)));
  GradEstimate phases = param_grad(params, sub(positive(), negative));

  CheckAccumulator acc("ebm_gradient", kIdentityTolerance,
                       describe("grid", grid.points.rows, data.cols, model.num_classes()));
  acc.compare(with_fault(direct.flat(), fault), phases.flat());
  return acc.finish();
}

CheckReport check_st_equals_ce(const PCemModel& model, const LabeledBatch& batch, double fault) {
  GradEstimate st = pcem_ll_grad(model, batch, batch.inputs, LabelMode::kModelSoft);
  Tensor z = model.logits(Tensor::from_matrix(batch.inputs));
  Tensor nll = neg(mean(log(pick(softmax(z), batch.labels))));
  GradEstimate ce = param_grad(model.parameters(), nll);
  CheckAccumulator acc("st_equals_ce", kIdentityTolerance,
                       describe("batch", batch.size(), batch.inputs.cols, model.num_classes()));
  acc.compare(with_fault(st.flat(), fault), negated(ce.flat()));
  return acc.finish();
}

CheckReport check_at_equals_contrastive(const PCemModel& model, const LabeledBatch& batch,
                                        const Matrix& adversarial, double fault) {
  GradEstimate contrastive =
      pcem_contrastive_grad(model, batch, adversarial, LabelMode::kModelSoft);
  Tensor z = model.logits(Tensor::from_matrix(adversarial));
  Tensor nll = neg(mean(log(pick(softmax(z), batch.labels))));
  GradEstimate robust = param_grad(model.parameters(), nll);
  CheckAccumulator acc("at_equals_contrastive", kIdentityTolerance,
                       describe("batch", batch.size(), batch.inputs.cols, model.num_classes()));
  acc.compare(with_fault(contrastive.flat(), fault), negated(robust.flat()));
  return acc.finish();
}

CheckReport check_at_telescoping(const PCemModel& model, const LabeledBatch& batch,
                                 const Matrix& adversarial, double fault) {
  GradEstimate parts = pcem_consistency_grad(model, batch, adversarial) +
                       pcem_contrastive_grad(model, batch, adversarial, LabelMode::kModelSoft);
  GradEstimate direct = pcem_ll_grad(model, batch, adversarial, LabelMode::kModelSoft);
  CheckAccumulator acc("at_telescoping", kAlgebraicTolerance,
                       describe("batch", batch.size(), batch.inputs.cols, model.num_classes()));
  acc.compare(with_fault(parts.flat(), fault), direct.flat());
  return acc.finish();
}

CheckReport check_infonce_equivalence(const NPCemModel& model, const Matrix& anchors,
                                      const Matrix& positives, double fault) {
  GradEstimate ll = npcem_ll_grad(model, anchors, positives, anchors, positives);
  GradEstimate full = full_batch_infonce_grad(model, anchors, positives);
  CheckAccumulator acc("infonce_equivalence", kIdentityTolerance,
                       describe("pairs", anchors.rows, anchors.cols, anchors.rows));
  acc.compare(with_fault(ll.flat(), fault), full.flat());
  return acc.finish();
}

CheckReport check_adv_infonce_equivalence(const NPCemModel& model, const Matrix& adversarial,
                                          const Matrix& positives, double fault) {
  GradEstimate contrastive = npcem_contrastive_grad(model, adversarial, positives, positives);
  Tensor loss = pooled_infonce_loss(model, Tensor::from_matrix(adversarial), positives);
  GradEstimate full = param_grad(model.parameters(), neg(loss));
  CheckAccumulator acc("adv_infonce_equivalence", kIdentityTolerance,
                       describe("pairs", adversarial.rows, adversarial.cols, adversarial.rows));
  acc.compare(with_fault(contrastive.flat(), fault), full.flat());
  return acc.finish();
}

CheckReport check_weight_normalization(const NPCemModel& model, const Matrix& anchors,
                                       const Matrix& pool, double fault) {
  Matrix w = importance_weights(model, anchors, pool);
  std::vector<double> means(w.rows, 0.0);
  bool negative = false;
  for (std::size_t a = 0; a < w.rows; ++a) {
    for (double v : w.row(a)) {
      means[a] += v;
      negative = negative || v < 0.0;
    }
    means[a] /= static_cast<double>(w.cols);
  }
  CheckAccumulator acc("importance_weight_normalization", kAlgebraicTolerance,
                       describe("pool", pool.rows, pool.cols, anchors.rows));
  acc.compare(with_fault(means, fault), std::vector<double>(w.rows, 1.0));
  CheckReport report = acc.finish();
  report.pass = report.pass && !negative;
  return report;
}

CheckReport check_sampler_decompositions(const PCemModel& model, const Matrix& x,
                                         std::span<const std::size_t> labels, double fault) {
  const std::vector<std::size_t> y(labels.begin(), labels.end());
  auto log_cond = [&](const Tensor& xt) {
    return sum(log(pick(softmax(model.logits(xt)), y)));
  };
  auto log_marginal = [&](const Tensor& xt) {
    return sum(log(row_sum(exp(model.logits(xt)))));
  };
  // f(x_i, y_i) = g(x_i) . W[:, y_i] with the class columns gathered up front.
  const Matrix w = model.class_weights().to_matrix();
  Matrix w_y(x.rows, w.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < w.rows; ++j) w_y(i, j) = w(j, y[i]);
  auto label_energy = [&](const Tensor& xt) {
    return sum(rows_dot(model.encoder().forward(xt), Tensor::from_matrix(w_y)));
  };

  const Matrix grad_cond = input_gradient(x, log_cond);
  const Matrix drift = input_gradient(x, log_marginal);
  const Matrix grad_label = input_gradient(x, label_energy);

  const Matrix pgd = supervised_direction(model, x, Rule::kPgd, y);
  const Matrix ta = supervised_direction(model, x, Rule::kTa, y);
  const Matrix cs = supervised_direction(model, x, Rule::kCs, y);
  const Matrix rcs = supervised_direction(model, x, Rule::kRcs, y);
  const Matrix langevin = supervised_direction(model, x, Rule::kLangevin, y);

  std::vector<double> rcs_minus_cs(rcs.size());
  for (std::size_t i = 0; i < rcs.size(); ++i) rcs_minus_cs[i] = rcs.data[i] - cs.data[i];

  CheckAccumulator acc("sampler_decompositions", kAlgebraicTolerance,
                       describe("inputs", x.rows, x.cols, model.num_classes()));
  acc.compare(with_fault(pgd.data, fault), negated(grad_cond.data));
  acc.compare(ta.data, grad_cond.data);
  acc.compare(rcs_minus_cs, drift.data);
  acc.compare(langevin.data, drift.data);
  acc.compare(cs.data, grad_label.data);
  return acc.finish();
}

// ---- randomized suite --------------------------------------------------------------------

namespace {

struct Fixtures {
  Rng rng;

  Fixtures(std::uint64_t seed, std::size_t check, std::size_t trial) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(check), static_cast<std::uint32_t>(trial)};
    rng.seed(seq);
  }

  std::size_t uniform(std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  }

  Matrix gaussian(std::size_t rows, std::size_t cols, double sd) {
    std::normal_distribution<double> n(0.0, sd);
    Matrix m(rows, cols);
    for (double& v : m.data) v = n(rng);
    return m;
  }

  Encoder encoder(std::size_t dim) {
    return Encoder::mlp(dim, {uniform(4, 12)}, uniform(2, 6), Activation::kTanh, rng);
  }

  PCemModel pcem(std::size_t dim, std::size_t k) {
    return PCemModel::random(encoder(dim), k, rng);
  }

  NPCemModel npcem(std::size_t dim) { return NPCemModel(encoder(dim)); }

  LabeledBatch labeled(std::size_t n, std::size_t dim, std::size_t k) {
    Matrix x = gaussian(n, dim, 1.5);
    std::vector<std::size_t> y(n);
    for (auto& v : y) v = uniform(0, k - 1);
    return LabeledBatch(std::move(x), std::move(y));
  }

  SamplerConfig attack(Rule rule) {
    SamplerConfig c;
    c.rule = rule;
    c.alpha = 0.1;
    c.beta = 0.5;
    c.eta = 0.0;
    c.k_steps = uniform(1, 3);
    return c;
  }
};

using TrialFn = std::function<CheckReport(Fixtures&, std::size_t trial, double fault)>;

struct SuiteEntry {
  std::string name;
  TrialFn trial;
};

const std::vector<SuiteEntry>& suite() {
  static const std::vector<SuiteEntry> entries = {
      {"ebm_gradient",
       [](Fixtures& f, std::size_t, double fault) {
         const std::size_t k = f.uniform(2, 8);
         PCemModel model = f.pcem(2, k);
         Matrix data = f.gaussian(f.uniform(5, 50), 2, 1.0);
         return check_ebm_gradient(GridDomain::square(-3.0, 3.0, 21), model, data, {}, fault);
       }},
      {"st_equals_ce",
       [](Fixtures& f, std::size_t, double fault) {
         const std::size_t dim = f.uniform(2, 4), k = f.uniform(2, 8);
         PCemModel model = f.pcem(dim, k);
         return check_st_equals_ce(model, f.labeled(f.uniform(5, 50), dim, k), fault);
       }},
      {"at_equals_contrastive",
       [](Fixtures& f, std::size_t trial, double fault) {
         const std::size_t dim = f.uniform(2, 4), k = f.uniform(2, 8);
         PCemModel model = f.pcem(dim, k);
         LabeledBatch batch = f.labeled(f.uniform(5, 50), dim, k);
         Matrix adv = pgd_attack(model, batch, f.attack(Rule::kPgd), trial);
         return check_at_equals_contrastive(model, batch, adv, fault);
       }},
      {"at_telescoping",
       [](Fixtures& f, std::size_t trial, double fault) {
         const std::size_t dim = f.uniform(2, 4), k = f.uniform(2, 8);
         PCemModel model = f.pcem(dim, k);
         LabeledBatch batch = f.labeled(f.uniform(5, 50), dim, k);
         Matrix adv = pgd_attack(model, batch, f.attack(Rule::kPgd), trial);
         return check_at_telescoping(model, batch, adv, fault);
       }},
      {"infonce_equivalence",
       [](Fixtures& f, std::size_t, double fault) {
         NPCemModel model = f.npcem(2);
         Matrix anchors = f.gaussian(f.uniform(5, 50), 2, 1.0);
         Matrix positives = augment_rows(anchors, default_augmentations(), f.rng);
         return check_infonce_equivalence(model, anchors, positives, fault);
       }},
      {"adv_infonce_equivalence",
       [](Fixtures& f, std::size_t trial, double fault) {
         NPCemModel model = f.npcem(2);
         Matrix anchors = f.gaussian(f.uniform(5, 50), 2, 1.0);
         Matrix positives = augment_rows(anchors, default_augmentations(), f.rng);
         Matrix adv = unsup_pgd_attack(model, anchors, positives, positives,
                                       f.attack(Rule::kUnsupPgd), trial);
         return check_adv_infonce_equivalence(model, adv, positives, fault);
       }},
      {"importance_weight_normalization",
       [](Fixtures& f, std::size_t, double fault) {
         NPCemModel model = f.npcem(2);
         Matrix anchors = f.gaussian(f.uniform(5, 50), 2, 1.0);
         Matrix pool = f.gaussian(f.uniform(5, 50), 2, 1.0);
         return check_weight_normalization(model, anchors, pool, fault);
       }},
      {"sampler_decompositions",
       [](Fixtures& f, std::size_t, double fault) {
         const std::size_t dim = f.uniform(2, 4), k = f.uniform(1, 8);
         PCemModel model = f.pcem(dim, k);
         LabeledBatch batch = f.labeled(f.uniform(5, 50), dim, k);
         return check_sampler_decompositions(model, batch.inputs, batch.labels, fault);
       }},
  };
  return entries;
}

}  // namespace

std::vector<std::string> suite_check_names() {
  std::vector<std::string> names;
  for (const auto& e : suite()) names.push_back(e.name);
  return names;
}

CheckReport run_suite_check(const std::string& name, const SuiteOptions& options) {
  const auto& entries = suite();
  auto it = std::find_if(entries.begin(), entries.end(),
                         [&](const SuiteEntry& e) { return e.name == name; });
  if (it == entries.end()) throw ContractError("unknown check '" + name + "'");
  if (options.trials == 0) throw ContractError("run_suite_check: trials must be >= 1");
  const std::size_t index = static_cast<std::size_t>(it - entries.begin());
  CheckReport total;
  total.name = name;
  total.pass = true;
  for (std::size_t t = 0; t < options.trials; ++t) {
    Fixtures fixtures(options.seed, index, t);
    CheckReport r = it->trial(fixtures, t, options.fault);
    total.max_abs = std::max(total.max_abs, r.max_abs);
    total.max_rel = std::max(total.max_rel, r.max_rel);
    total.tolerance = r.tolerance;
    total.pass = total.pass && r.pass;
  }
  total.trials = options.trials;
  total.fixture = "random tanh MLP fixtures, seed " + std::to_string(options.seed);
  return total;
}

std::vector<CheckReport> run_suite(const std::vector<std::string>& names,
                                   const SuiteOptions& options) {
  std::vector<CheckReport> out;
  for (const auto& n : names) out.push_back(run_suite_check(n, options));
  return out;
}

std::string report_json(const std::vector<CheckReport>& reports) {
  nlohmann::json checks = nlohmann::json::array();
  bool all = true;
  for (const auto& r : reports) {
    checks.push_back({{"name", r.name},
                      {"max_abs", r.max_abs},
                      {"max_rel", r.max_rel},
                      {"tolerance", r.tolerance},
                      {"pass", r.pass},
                      {"trials", r.trials},
                      {"fixture", r.fixture}});
    all = all && r.pass;
  }
  nlohmann::json doc = {{"all_pass", all}, {"checks", checks}};
  return doc.dump(2) + "\n";
}

// ---- statistical diagnostics and metrics --------------------------------------------

double entropy_estimate(const NPCemModel& model, const Matrix& batch) {
  if (batch.rows == 0) throw ContractError("entropy_estimate: empty batch");
  Tensor g = model.features(Tensor::from_matrix(batch));
  Tensor sim = matmul(g, transpose(g));
  return -mean(logsumexp(sim)).item() + std::log(static_cast<double>(batch.rows));
}

PCemModel standard_normal_fixture(std::size_t dim) {
  return PCemModel(Encoder::squared_norm(dim), Tensor::constant({1, 1}, {-0.5}));
}

LangevinDiagnostic langevin_gaussian_diagnostic(const LangevinDiagnosticConfig& config) {
  if (config.burn_in > config.steps || config.stride == 0) {
    throw ContractError("langevin_gaussian_diagnostic: need burn_in <= steps and stride >= 1");
  }
  const std::size_t dim = 2;
  PCemModel model = standard_normal_fixture(dim);
  SamplerConfig sc;
  sc.rule = Rule::kLangevin;
  sc.alpha = config.alpha;
  sc.eta = std::sqrt(2.0 * config.alpha);
  sc.k_steps = config.steps;
  sc.trajectory_stride = config.stride;
  Rng rng(config.seed);
  SeedSpec spec;
  spec.dim = dim;
  Matrix seeds = init_seeds(spec, config.chains, rng).points;
  ChainResult result = run_chain(model, sc, seeds, {}, config.seed);

  LangevinDiagnostic out;
  out.mean.assign(dim, 0.0);
  out.covariance = Matrix(dim, dim, 0.0);
  std::size_t count = 0;
  for (const auto& frame : result.trajectory) {
    if (frame.step < config.burn_in || frame.step % config.stride != 0) continue;
    for (std::size_t i = 0; i < frame.state.rows; ++i) {
      for (std::size_t a = 0; a < dim; ++a) out.mean[a] += frame.state(i, a);
      ++count;
    }
  }
  for (double& m : out.mean) m /= static_cast<double>(count);
  for (const auto& frame : result.trajectory) {
    if (frame.step < config.burn_in || frame.step % config.stride != 0) continue;
    for (std::size_t i = 0; i < frame.state.rows; ++i)
      for (std::size_t a = 0; a < dim; ++a)
        for (std::size_t b = 0; b < dim; ++b)
          out.covariance(a, b) +=
              (frame.state(i, a) - out.mean[a]) * (frame.state(i, b) - out.mean[b]);
  }
  for (double& c : out.covariance.data) c /= static_cast<double>(count);
  for (double m : out.mean) out.mean_error = std::max(out.mean_error, std::abs(m));
  for (std::size_t a = 0; a < dim; ++a)
    for (std::size_t b = 0; b < dim; ++b)
      out.cov_error = std::max(out.cov_error, std::abs(out.covariance(a, b) - (a == b ? 1.0 : 0.0)));

  out.report.name = "langevin_gaussian";
  out.report.max_abs = out.mean_error;
  out.report.max_rel = out.cov_error;
  out.report.tolerance = config.mean_threshold;
  out.report.pass =
      out.mean_error <= config.mean_threshold && out.cov_error <= config.cov_threshold;
  out.report.trials = count;
  out.report.fixture = "N(0,I) target, " + std::to_string(config.chains) + " chains x " +
                       std::to_string(config.steps) + " steps; max_abs = mean error, " +
                       "max_rel = covariance error (threshold " +
                       std::to_string(config.cov_threshold) + ")";
  return out;
}

ModeCoverage mode_coverage(const Matrix& samples, const Matrix& centers, double sigma,
                           double min_fraction) {
  if (centers.rows == 0 || samples.rows == 0) throw ContractError("mode_coverage: empty input");
  if (samples.cols != centers.cols) {
    throw ShapeError("mode_coverage", Shape{samples.rows, samples.cols},
                     Shape{centers.rows, centers.cols});
  }
  ModeCoverage out;
  out.fractions.assign(centers.rows, 0.0);
  std::size_t good = 0;
  for (std::size_t i = 0; i < samples.rows; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows; ++c) {
      double d = 0.0;
      for (std::size_t j = 0; j < samples.cols; ++j) {
        const double diff = samples(i, j) - centers(c, j);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out.fractions[best] += 1.0;
    good += std::sqrt(best_d) <= 3.0 * sigma;
  }
  const double n = static_cast<double>(samples.rows);
  for (double& f : out.fractions) {
    f /= n;
    out.covered += f >= min_fraction;
  }
  out.high_quality = static_cast<double>(good) / n;
  return out;
}

std::vector<std::size_t> assign_to_grid(const Matrix& samples, const GridDomain& grid) {
  if (samples.cols != grid.points.cols) {
    throw ShapeError("assign_to_grid", Shape{samples.rows, samples.cols},
                     Shape{grid.points.rows, grid.points.cols});
  }
  std::vector<std::size_t> cells(samples.rows);
  for (std::size_t i = 0; i < samples.rows; ++i) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < grid.points.rows; ++p) {
      double d = 0.0;
      for (std::size_t j = 0; j < samples.cols; ++j) {
        const double diff = samples(i, j) - grid.points(p, j);
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = p;
      }
    }
    cells[i] = best;
  }
  return cells;
}

double histogram_kl(const std::vector<std::size_t>& cells, const std::vector<double>& target) {
  if (cells.empty()) throw ContractError("histogram_kl: no samples");
  constexpr double kSmoothing = 1e-12;
  std::vector<double> p(target.size(), kSmoothing);
  const double step = 1.0 / static_cast<double>(cells.size());
  for (std::size_t c : cells) {
    if (c >= target.size()) throw ContractError("histogram_kl: cell index out of range");
    p[c] += step;
  }
  double p_total = 0.0, q_total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    p_total += p[i];
    q_total += target[i] + kSmoothing;
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i] / p_total;
    const double qi = (target[i] + kSmoothing) / q_total;
    kl += pi * std::log(pi / qi);
  }
  return std::max(kl, 0.0);
}

double grid_kl(const Matrix& samples, const PCemModel& model, const GridDomain& grid) {
  return histogram_kl(assign_to_grid(samples, grid), exact_marginal_grid(model, grid));
}

}  // namespace cem
