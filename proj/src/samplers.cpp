#include "cem/samplers.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

namespace cem {

namespace {

const std::map<std::string, Rule>& rule_names() {
  static const std::map<std::string, Rule> names{
      {"pgd", Rule::kPgd},       {"langevin", Rule::kLangevin},
      {"ta", Rule::kTa},         {"cs", Rule::kCs},
      {"rcs", Rule::kRcs},       {"unsup_langevin", Rule::kUnsupLangevin},
      {"unsup_pgd", Rule::kUnsupPgd}, {"maxent", Rule::kMaxEnt}};
  return names;
}

Matrix grad_wrt_input(const Tensor& root, const Tensor& input) {
  std::vector<double> g = gradient(root, input);
  return Matrix(input.rows(), input.cols(), std::move(g));
}

void require_labels(const char* op, std::span<const std::size_t> labels, std::size_t rows,
                    std::size_t classes) {
  if (labels.size() != rows) {
    throw ContractError(std::string(op) + ": expected " + std::to_string(rows) +
                        " labels, got " + std::to_string(labels.size()));
  }
  for (std::size_t y : labels) {
    if (y >= classes) {
      throw ContractError(std::string(op) + ": label " + std::to_string(y) +
                          " out of range for " + std::to_string(classes) + " classes");
    }
  }
}

void require_dim(const char* op, const Matrix& x, std::size_t dim) {
  if (x.cols != dim) {
    throw ShapeError(op, Shape{x.rows, x.cols}, Shape{x.rows, dim});
  }
}

}  // namespace

std::string to_string(Rule rule) {
  for (const auto& [name, r] : rule_names())
    if (r == rule) return name;
  return "unknown";
}

Rule parse_rule(const std::string& name) {
  auto it = rule_names().find(name);
  if (it == rule_names().end()) throw ContractError("unknown sampling rule '" + name + "'");
  return it->second;
}

bool is_supervised(Rule rule) {
  switch (rule) {
    case Rule::kPgd:
    case Rule::kLangevin:
    case Rule::kTa:
    case Rule::kCs:
    case Rule::kRcs:
      return true;
    default:
      return false;
  }
}

void SamplerConfig::validate() const {
  if (!(alpha >= 0.0)) throw ContractError("sampler: alpha must be >= 0");
  if (!(eta >= 0.0)) throw ContractError("sampler: eta must be >= 0");
  if (!(beta > 0.0)) throw ContractError("sampler: beta must be > 0");
  if (!(anneal > 0.0)) throw ContractError("sampler: anneal must be > 0");
}

double SamplerConfig::eta_at(std::size_t step) const {
  return anneal == 1.0 ? eta : eta * std::pow(anneal, static_cast<double>(step));
}

SamplerConfig SamplerConfig::supervised_defaults() {
  SamplerConfig c;
  c.alpha = 1.0;
  c.beta = 6.0;
  c.eta = 0.01;
  c.k_steps = 20;
  c.rule = Rule::kRcs;
  return c;
}

SamplerConfig SamplerConfig::unsupervised_defaults(std::size_t k_steps) {
  SamplerConfig c;
  c.alpha = 7.0;
  c.beta = std::numeric_limits<double>::infinity();
  c.eta = 0.0;
  c.k_steps = k_steps;
  c.rule = Rule::kMaxEnt;
  return c;
}

Chain Chain::start(Matrix seeds, std::uint64_t rng_seed) {
  Chain c;
  c.origin = seeds;
  c.state = std::move(seeds);
  c.rng_seed = rng_seed;
  c.rngs.reserve(c.state.rows);
  for (std::size_t i = 0; i < c.state.rows; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(rng_seed & 0xffffffffu),
                      static_cast<std::uint32_t>(rng_seed >> 32),
                      static_cast<std::uint32_t>(i)};
    c.rngs.emplace_back(seq);
  }
  c.normals.assign(c.state.rows, std::normal_distribution<double>(0.0, 1.0));
  return c;
}

// ---- directions ---------------------------------------------------------------------

Matrix lse_drift(const PCemModel& model, const Matrix& x) {
  require_dim("lse_drift", x, model.input_dim());
  Tensor input = Tensor::from_matrix(x, true);
  return grad_wrt_input(sum(logsumexp(model.logits(input))), input);
}

Matrix label_drift(const PCemModel& model, const Matrix& x,
                   std::span<const std::size_t> labels) {
  require_dim("label_drift", x, model.input_dim());
  require_labels("label_drift", labels, x.rows, model.num_classes());
  Tensor input = Tensor::from_matrix(x, true);
  return grad_wrt_input(sum(pick(model.logits(input), labels)), input);
}

Matrix supervised_direction(const PCemModel& model, const Matrix& x, Rule rule,
                            std::span<const std::size_t> labels) {
  require_dim("supervised_direction", x, model.input_dim());
  double lse_coef = 0.0, label_coef = 0.0;
  switch (rule) {
    case Rule::kPgd:  // +lse - f(x, y)
      lse_coef = 1.0;
      label_coef = -1.0;
      break;
    case Rule::kLangevin:
      lse_coef = 1.0;
      break;
    case Rule::kTa:  // +f(x, t) - lse
      lse_coef = -1.0;
      label_coef = 1.0;
      break;
    case Rule::kCs:
      label_coef = 1.0;
      break;
    case Rule::kRcs:
      lse_coef = 1.0;
      label_coef = 1.0;
      break;
    default:
      throw ContractError("supervised_direction: rule " + to_string(rule) +
                          " needs a non-parametric model");
  }
  Tensor input = Tensor::from_matrix(x, true);
  Tensor logits = model.logits(input);
  Tensor objective;
  if (lse_coef != 0.0) objective = scale(sum(logsumexp(logits)), lse_coef);
  if (label_coef != 0.0) {
    require_labels("supervised_direction", labels, x.rows, model.num_classes());
    Tensor term = scale(sum(pick(logits, labels)), label_coef);
    objective = objective.defined() ? add(objective, term) : term;
  }
  return grad_wrt_input(objective, input);
}

Matrix unsup_direction(const NPCemModel& model, const Matrix& x, const Matrix& negatives,
                       const Matrix* positives) {
  require_dim("unsup_direction", x, model.input_dim());
  if (negatives.rows == 0) throw ContractError("unsup_direction: empty negative set");
  require_dim("unsup_direction", negatives, model.input_dim());
  Tensor input = Tensor::from_matrix(x, true);
  Tensor feats = model.features(input);
  Tensor neg_feats = model.features(Tensor::from_matrix(negatives));
  Tensor objective = sum(logsumexp(matmul(feats, transpose(neg_feats))));
  if (positives != nullptr) {
    require_dim("unsup_direction", *positives, model.input_dim());
    Matrix pos = *positives;
    if (pos.rows == 1 && x.rows > 1) {
      Matrix tiled(x.rows, pos.cols);
      for (std::size_t i = 0; i < x.rows; ++i)
        std::copy(pos.row(0).begin(), pos.row(0).end(), tiled.row(i).begin());
      pos = std::move(tiled);
    }
    if (pos.rows != x.rows) {
      throw ShapeError("unsup_direction", Shape{x.rows, x.cols}, Shape{pos.rows, pos.cols});
    }
    Tensor pos_feats = model.features(Tensor::from_matrix(pos));
    objective = sub(objective, sum(rows_dot(feats, pos_feats)));
  }
  return grad_wrt_input(objective, input);
}

Matrix maxent_direction(const NPCemModel& model, const Matrix& x) {
  require_dim("maxent_direction", x, model.input_dim());
  Tensor input = Tensor::from_matrix(x, true);
  Tensor feats = model.features(input);
  Tensor s = sum(logsumexp(matmul(feats, transpose(feats))));
  return grad_wrt_input(neg(s), input);
}

// ---- stepping -----------------------------------------------------------------------

void project_l2(Matrix& state, const Matrix& origin, double beta) {
  if (std::isinf(beta)) return;
  for (std::size_t i = 0; i < state.rows; ++i) {
    auto x = state.row(i);
    auto x0 = origin.row(i);
    double norm2 = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) norm2 += (x[j] - x0[j]) * (x[j] - x0[j]);
    const double norm = std::sqrt(norm2);
    if (norm > beta) {
      const double shrink = beta / norm;
      for (std::size_t j = 0; j < x.size(); ++j) x[j] = x0[j] + (x[j] - x0[j]) * shrink;
    }
  }
}

Chain& apply_update(Chain& chain, const Matrix& direction, const SamplerConfig& config,
                    const std::string& rule_name) {
  if (direction.rows != chain.state.rows || direction.cols != chain.state.cols) {
    throw ShapeError("apply_update", Shape{direction.rows, direction.cols},
                     Shape{chain.state.rows, chain.state.cols});
  }
  for (double g : direction.data) {
    if (!std::isfinite(g)) throw SamplerError(rule_name, chain.step_index);
  }
  const double eta = config.eta_at(chain.step_index);
  for (std::size_t i = 0; i < chain.state.rows; ++i) {
    auto x = chain.state.row(i);
    auto g = direction.row(i);
    double step_scale = config.alpha;
    if (config.normalize_gradient) {
      double norm2 = 0.0;
      for (double v : g) norm2 += v * v;
      if (norm2 > 0.0) step_scale /= std::sqrt(norm2);
    }
    for (std::size_t j = 0; j < x.size(); ++j) x[j] += step_scale * g[j];
    if (eta > 0.0) {
      for (double& v : x) v += eta * chain.normals[i](chain.rngs[i]);
    }
  }
  project_l2(chain.state, chain.origin, config.beta);
  ++chain.step_index;
  return chain;
}

Chain& pgd_step(const PCemModel& model, Chain& chain, std::span<const std::size_t> labels,
                const SamplerConfig& config) {
  return apply_update(chain, supervised_direction(model, chain.state, Rule::kPgd, labels),
                      config, "pgd_step");
}

Chain& langevin_step_pcem(const PCemModel& model, Chain& chain, const SamplerConfig& config) {
  return apply_update(chain, supervised_direction(model, chain.state, Rule::kLangevin, {}),
                      config, "langevin_step_pcem");
}

Chain& ta_step(const PCemModel& model, Chain& chain, std::span<const std::size_t> targets,
               const SamplerConfig& config) {
  return apply_update(chain, supervised_direction(model, chain.state, Rule::kTa, targets),
                      config, "ta_step");
}

Chain& cs_step(const PCemModel& model, Chain& chain, std::span<const std::size_t> targets,
               const SamplerConfig& config) {
  return apply_update(chain, supervised_direction(model, chain.state, Rule::kCs, targets),
                      config, "cs_step");
}

Chain& rcs_step(const PCemModel& model, Chain& chain, std::span<const std::size_t> targets,
                const SamplerConfig& config) {
  return apply_update(chain, supervised_direction(model, chain.state, Rule::kRcs, targets),
                      config, "rcs_step");
}

Chain& unsup_langevin_step(const NPCemModel& model, Chain& chain, const Matrix& negatives,
                           const SamplerConfig& config) {
  return apply_update(chain, unsup_direction(model, chain.state, negatives, nullptr), config,
                      "unsup_langevin_step");
}

Chain& unsup_pgd_step(const NPCemModel& model, Chain& chain, const Matrix& positives,
                      const Matrix& negatives, const SamplerConfig& config) {
  return apply_update(chain, unsup_direction(model, chain.state, negatives, &positives), config,
                      "unsup_pgd_step");
}

Chain& maxent_step(const NPCemModel& model, Chain& chain, const SamplerConfig& config) {
  return apply_update(chain, maxent_direction(model, chain.state), config, "maxent_step");
}

// ---- seeds -------------------------------------------------------------------------

std::string to_string(SeedMode mode) {
  switch (mode) {
    case SeedMode::kDataPoint:
      return "data_point";
    case SeedMode::kFittedNormal:
      return "fitted_normal";
    case SeedMode::kClasswiseNormal:
      return "classwise_normal";
    case SeedMode::kStandardNormal:
      return "standard_normal";
  }
  return "unknown";
}

SeedMode parse_seed_mode(const std::string& name) {
  for (SeedMode m : {SeedMode::kDataPoint, SeedMode::kFittedNormal, SeedMode::kClasswiseNormal,
                     SeedMode::kStandardNormal}) {
    if (to_string(m) == name) return m;
  }
  throw ContractError("unknown seed mode '" + name + "'");
}

namespace {

struct FittedNormal {
  Eigen::VectorXd mean;
  Eigen::MatrixXd chol;  // lower factor
  bool regularized = false;
};

FittedNormal fit_normal(const Matrix& pts, std::span<const std::size_t> rows) {
  const std::size_t n = rows.size(), d = pts.cols;
  if (n < 2) throw ContractError("fitted normal seeds need at least 2 reference points");
  FittedNormal f;
  f.mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t r : rows)
    for (std::size_t j = 0; j < d; ++j) f.mean(static_cast<Eigen::Index>(j)) += pts(r, j);
  f.mean /= static_cast<double>(n);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                                              static_cast<Eigen::Index>(d));
  for (std::size_t r : rows) {
    Eigen::VectorXd c(static_cast<Eigen::Index>(d));
    for (std::size_t j = 0; j < d; ++j) c(static_cast<Eigen::Index>(j)) = pts(r, j);
    c -= f.mean;
    cov += c * c.transpose();
  }
  cov /= static_cast<double>(n);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success || llt.matrixL().toDenseMatrix().diagonal().minCoeff() <= 0.0) {
    cov += 1e-6 * Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
    llt.compute(cov);
    f.regularized = true;
    std::clog << "warning: singular seed covariance, adding 1e-6 I\n";
  }
  f.chol = llt.matrixL();
  return f;
}

void draw_normal(const FittedNormal& f, std::span<double> out, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd e(f.mean.size());
  for (Eigen::Index j = 0; j < e.size(); ++j) e(j) = z(rng);
  Eigen::VectorXd x = f.mean + f.chol * e;
  for (Eigen::Index j = 0; j < x.size(); ++j) out[static_cast<std::size_t>(j)] = x(j);
}

}  // namespace

SeedBatch init_seeds(const SeedSpec& spec, std::size_t n, Rng& rng) {
  SeedBatch batch;
  switch (spec.mode) {
    case SeedMode::kStandardNormal: {
      std::normal_distribution<double> z(0.0, 1.0);
      batch.points = Matrix(n, spec.dim);
      for (double& v : batch.points.data) v = z(rng);
      break;
    }
    case SeedMode::kDataPoint: {
      if (spec.reference.rows == 0) throw ContractError("data_point seeds need reference data");
      std::uniform_int_distribution<std::size_t> pick_row(0, spec.reference.rows - 1);
      batch.points = Matrix(n, spec.reference.cols);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = pick_row(rng);
        std::copy(spec.reference.row(r).begin(), spec.reference.row(r).end(),
                  batch.points.row(i).begin());
        if (!spec.labels.empty()) batch.classes.push_back(spec.labels.at(r));
      }
      break;
    }
    case SeedMode::kFittedNormal: {
      std::vector<std::size_t> all(spec.reference.rows);
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      const FittedNormal f = fit_normal(spec.reference, all);
      batch.regularized = f.regularized;
      batch.points = Matrix(n, spec.reference.cols);
      for (std::size_t i = 0; i < n; ++i) draw_normal(f, batch.points.row(i), rng);
      break;
    }
    case SeedMode::kClasswiseNormal: {
      if (spec.labels.size() != spec.reference.rows || spec.labels.empty()) {
        throw ContractError("classwise_normal seeds need one label per reference point");
      }
      std::size_t k = 0;
      for (std::size_t y : spec.labels) k = std::max(k, y + 1);
      std::vector<std::vector<std::size_t>> members(k);
      for (std::size_t i = 0; i < spec.labels.size(); ++i) members[spec.labels[i]].push_back(i);
      std::vector<FittedNormal> fits;
      for (const auto& m : members) {
        fits.push_back(fit_normal(spec.reference, m));
        batch.regularized = batch.regularized || fits.back().regularized;
      }
      batch.points = Matrix(n, spec.reference.cols);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = i % k;
        draw_normal(fits[y], batch.points.row(i), rng);
        batch.classes.push_back(y);
      }
      break;
    }
  }
  return batch;
}

// ---- chains ---------------------------------------------------------------------------

namespace {

template <typename StepFn>
ChainResult drive(const SamplerConfig& config, const Matrix& seeds, std::uint64_t rng_seed,
                  StepFn step) {
  config.validate();
  Chain chain = Chain::start(seeds, rng_seed);
  ChainResult result;
  const std::size_t stride = config.trajectory_stride;
  if (stride > 0) result.trajectory.push_back({0, chain.state});
  for (std::size_t k = 0; k < config.k_steps; ++k) {
    step(chain);
    if (stride > 0 && (chain.step_index % stride == 0 || k + 1 == config.k_steps)) {
      result.trajectory.push_back({chain.step_index, chain.state});
    }
  }
  result.final_state = std::move(chain.state);
  return result;
}

}  // namespace

ChainResult run_chain(const PCemModel& model, const SamplerConfig& config, const Matrix& seeds,
                      const ChainAux& aux, std::uint64_t rng_seed) {
  if (!is_supervised(config.rule)) {
    throw ContractError("run_chain: rule " + to_string(config.rule) +
                        " needs a non-parametric model");
  }
  if (config.rule != Rule::kLangevin) {
    require_labels("run_chain", aux.labels, seeds.rows, model.num_classes());
  }
  return drive(config, seeds, rng_seed, [&](Chain& chain) {
    apply_update(chain, supervised_direction(model, chain.state, config.rule, aux.labels),
                 config, to_string(config.rule));
  });
}

ChainResult run_chain(const NPCemModel& model, const SamplerConfig& config, const Matrix& seeds,
                      const ChainAux& aux, std::uint64_t rng_seed) {
  switch (config.rule) {
    case Rule::kUnsupLangevin:
      return drive(config, seeds, rng_seed, [&](Chain& chain) {
        unsup_langevin_step(model, chain, aux.negatives, config);
      });
    case Rule::kUnsupPgd:
      return drive(config, seeds, rng_seed, [&](Chain& chain) {
        unsup_pgd_step(model, chain, aux.positives, aux.negatives, config);
      });
    case Rule::kMaxEnt:
      return drive(config, seeds, rng_seed,
                   [&](Chain& chain) { maxent_step(model, chain, config); });
    default:
      throw ContractError("run_chain: rule " + to_string(config.rule) +
                          " needs a parametric model");
  }
}

void write_trajectory_csv(const std::string& path, const std::vector<TrajectoryFrame>& frames) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  const std::size_t dim = frames.empty() ? 0 : frames.front().state.cols;
  out << "step_index,chain_id";
  for (std::size_t j = 0; j < dim; ++j) out << ",x" << (j + 1);
  out << "\n";
  char buf[32];
  for (const auto& frame : frames) {
    for (std::size_t i = 0; i < frame.state.rows; ++i) {
      out << frame.step << "," << i;
      for (double v : frame.state.row(i)) {
        std::snprintf(buf, sizeof(buf), ",%.17g", v);
        out << buf;
      }
      out << "\n";
    }
  }
}

void write_samples_csv(const std::string& path, const Matrix& samples,
                       std::span<const std::size_t> classes) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "chain_id";
  for (std::size_t j = 0; j < samples.cols; ++j) out << ",x" << (j + 1);
  if (!classes.empty()) out << ",target";
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < samples.rows; ++i) {
    out << i;
    for (double v : samples.row(i)) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out << buf;
    }
    if (!classes.empty()) out << "," << classes[i];
    out << "\n";
  }
}

}  // namespace cem
