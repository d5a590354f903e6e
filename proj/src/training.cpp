#include "cem/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>

namespace cem {

namespace {

// splitmix64 finaliser; keeps the shuffle, augmentation and attack streams
// independent so a null attack or regularizer leaves the others untouched.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1) + 0xBF58476D1CE4E5B9ull * counter;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

enum Stream : std::uint64_t { kShuffle = 0, kAugment = 1, kAttack = 2, kEval = 3 };

using ParamList = std::vector<std::pair<std::string, Tensor>>;

class Sgd {
 public:
  Sgd(ParamList params, const OptimizerSpec& spec) : params_(std::move(params)), spec_(spec) {
    for (const auto& [_, p] : params_) velocity_.emplace_back(p.size(), 0.0);
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    for (const auto& [_, p] : params_) out.emplace_back(p.values().begin(), p.values().end());
    return out;
  }

  void restore(const std::vector<std::vector<double>>& values) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto dst = params_[i].second.mutable_values();
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

  void step(const Tensor& loss) {
    std::vector<Tensor> wrt;
    for (const auto& [_, p] : params_) wrt.push_back(p);
    auto grads = gradients(loss, wrt);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto values = params_[i].second.mutable_values();
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < values.size(); ++j) {
        double g = grads[i][j];
        if (spec_.weight_decay != 0.0) g += spec_.weight_decay * values[j];
        v[j] = spec_.momentum * v[j] + g;
        values[j] -= spec_.lr * v[j];
      }
    }
  }

  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  OptimizerSpec spec_;
  std::vector<std::vector<double>> velocity_;
};

struct StepLoss {
  Tensor total;
  double main = 0.0;
  double reg = 0.0;
};

void validate(const TrainSpec& spec, const Dataset2D& data) {
  if (data.size() == 0) throw ContractError("train: empty dataset");
  if (spec.optimizer.batch_size == 0) throw ContractError("train: batch_size must be >= 1");
  if (!(spec.optimizer.lr > 0.0)) throw ContractError("train: lr must be > 0");
  if (spec.optimizer.momentum < 0.0 || spec.optimizer.momentum >= 1.0) {
    throw ContractError("train: momentum must lie in [0, 1)");
  }
  if (spec.reg_weight < 0.0) throw ContractError("train: regularizer weight must be >= 0");
  if (uses_attack(spec.objective)) spec.attack.validate();
  spec.eval_attack.validate();
}

template <class Model, class LossFn, class EvalFn>
TrainResult run_epochs(Model& model, const Dataset2D& data, const TrainSpec& spec, LossFn loss_fn,
                       EvalFn eval_fn) {
  validate(spec, data);
  Sgd sgd(model.parameters(), spec.optimizer);
  Rng shuffle_rng(derive_seed(spec.seed, kShuffle, 0));
  Rng augment_rng(derive_seed(spec.seed, kAugment, 0));
  TrainResult result;
  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < spec.optimizer.epochs; ++epoch) {
    BatchIterator it(data.size(), spec.optimizer.batch_size, true, shuffle_rng);
    EpochMetrics m;
    m.epoch = epoch + 1;
    double total = 0.0, main = 0.0, reg = 0.0;
    while (!it.done()) {
      const auto index = it.next();
      const std::uint64_t attack_seed = derive_seed(spec.seed, kAttack, global_step);
      StepLoss loss = loss_fn(index, augment_rng, attack_seed);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        result.log.push_back(m);
        throw TrainingDiverged(epoch + 1, global_step, result.log);
      }
      const auto before = sgd.snapshot();
      sgd.step(loss.total);
      for (const auto& [_, p] : sgd.params()) {
        for (double v : p.values()) {
          if (!std::isfinite(v)) {
            sgd.restore(before);
            throw TrainingDiverged(epoch + 1, global_step, result.log);
          }
        }
      }
      const double w = static_cast<double>(index.size());
      total += w * value;
      main += w * loss.main;
      reg += w * loss.reg;
      ++global_step;
    }
    const double n = static_cast<double>(data.size());
    m.loss = total / n;
    m.main_loss = main / n;
    m.reg_loss = reg / n;
    eval_fn(m, derive_seed(spec.seed, kEval, epoch));
    result.log.push_back(m);
  }
  return result;
}

double fraction_correct(const std::vector<std::size_t>& predicted,
                        const std::vector<std::size_t>& labels) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += predicted[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<std::size_t> argmax_rows(const Matrix& scores) {
  std::vector<std::size_t> out(scores.rows);
  for (std::size_t i = 0; i < scores.rows; ++i) {
    auto row = scores.row(i);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

const std::vector<std::size_t>& require_labels(const Dataset2D& data, const char* op) {
  if (!data.labels) throw ContractError(std::string(op) + ": dataset has no labels");
  return *data.labels;
}

}  // namespace

std::string to_string(Objective objective) {
  switch (objective) {
    case Objective::kCe: return "ce";
    case Objective::kAt: return "at";
    case Objective::kAtTrades: return "at+trades";
    case Objective::kAtCr: return "at+cr";
    case Objective::kInfoNce: return "infonce";
    case Objective::kUat: return "uat";
    case Objective::kUatUcr: return "uat+ucr";
  }
  return "?";
}

Objective parse_objective(const std::string& name) {
  for (Objective o : {Objective::kCe, Objective::kAt, Objective::kAtTrades, Objective::kAtCr,
                      Objective::kInfoNce, Objective::kUat, Objective::kUatUcr}) {
    if (to_string(o) == name) return o;
  }
  throw ContractError("unknown objective '" + name +
                      "' (expected ce, at, at+trades, at+cr, infonce, uat, uat+ucr)");
}

bool is_supervised(Objective objective) {
  return objective == Objective::kCe || objective == Objective::kAt ||
         objective == Objective::kAtTrades || objective == Objective::kAtCr;
}

bool uses_attack(Objective objective) {
  return objective != Objective::kCe && objective != Objective::kInfoNce;
}

TrainingDiverged::TrainingDiverged(std::size_t epoch, std::size_t step,
                                   std::vector<EpochMetrics> log)
    : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                         ", step " + std::to_string(step)),
      epoch_(epoch),
      step_(step),
      log_(std::move(log)) {}

TrainResult train(PCemModel& model, const Dataset2D& data, const TrainSpec& spec) {
  if (!is_supervised(spec.objective)) {
    throw ContractError("train: objective " + to_string(spec.objective) + " needs an NP-CEM");
  }
  const auto& labels = require_labels(data, "train");
  for (std::size_t y : labels) {
    if (y >= model.num_classes()) throw ContractError("train: label out of range for model");
  }
  auto loss_fn = [&](const std::vector<std::size_t>& index, Rng&, std::uint64_t attack_seed) {
    LabeledBatch batch(gather_rows(data.points, index), gather(labels, index));
    StepLoss out;
    if (spec.objective == Objective::kCe) {
      out.total = ce_loss(model, batch);
      out.main = out.total.item();
      return out;
    }
    SamplerConfig attack = spec.attack;
    attack.rule = Rule::kPgd;
    Tensor adversarial =
        Tensor::from_matrix(pgd_attack(model, batch, attack, attack_seed));
    Tensor main = ce_loss(model, adversarial, batch.labels);
    out.main = main.item();
    out.total = main;
    if (spec.objective == Objective::kAt || spec.reg_weight == 0.0) return out;
    Tensor reg = spec.objective == Objective::kAtTrades
                     ? trades_kl(model, Tensor::from_matrix(batch.inputs), adversarial)
                     : cr_loss(model, batch, adversarial);
    out.reg = reg.item();
    out.total = add(main, scale(reg, spec.reg_weight));
    return out;
  };
  auto eval_fn = [&](EpochMetrics& m, std::uint64_t seed) {
    m.natural_acc = fraction_correct(predict(model, data.points), labels);
    if (spec.eval_attack.k_steps > 0) {
      m.robust_acc = evaluate_accuracy(model, data, spec.eval_attack, seed).robust;
    }
  };
  return run_epochs(model, data, spec, loss_fn, eval_fn);
}

TrainResult train(NPCemModel& model, const Dataset2D& data, const TrainSpec& spec) {
  if (is_supervised(spec.objective)) {
    throw ContractError("train: objective " + to_string(spec.objective) + " needs a P-CEM");
  }
  if (spec.augmentations.empty()) throw ContractError("train: augmentation set is empty");
  auto loss_fn = [&](const std::vector<std::size_t>& index, Rng& augment_rng,
                     std::uint64_t attack_seed) {
    Matrix anchors = gather_rows(data.points, index);
    Matrix positives = augment_rows(anchors, spec.augmentations, augment_rng);
    StepLoss out;
    if (spec.objective == Objective::kInfoNce) {
      out.total = pooled_infonce_loss(model, Tensor::from_matrix(anchors), positives);
      out.main = out.total.item();
      return out;
    }
    SamplerConfig attack = spec.attack;
    attack.rule = Rule::kUnsupPgd;
    Matrix adv = unsup_pgd_attack(model, anchors, positives, positives, attack, attack_seed);
    Tensor adversarial = Tensor::from_matrix(adv);
    Tensor main = pooled_infonce_loss(model, adversarial, positives);
    out.main = main.item();
    out.total = main;
    if (spec.objective == Objective::kUat || spec.reg_weight == 0.0) return out;
    Tensor reg = ucr_loss(model, Tensor::from_matrix(anchors), Tensor::from_matrix(positives),
                          adversarial);
    out.reg = reg.item();
    out.total = add(main, scale(reg, spec.reg_weight));
    return out;
  };
  auto eval_fn = [&](EpochMetrics& m, std::uint64_t seed) {
    if (!data.labels) return;
    Accuracy acc = evaluate_accuracy(model, data, data, spec.eval_attack, seed);
    m.natural_acc = acc.natural;
    if (spec.eval_attack.k_steps > 0) m.robust_acc = acc.robust;
  };
  return run_epochs(model, data, spec, loss_fn, eval_fn);
}

std::vector<double> train_exact_mle(PCemModel& model, const Dataset2D& data,
                                    const GridDomain& grid, const OptimizerSpec& optimizer) {
  const auto& labels = require_labels(data, "train_exact_mle");
  if (!(optimizer.lr > 0.0)) throw ContractError("train_exact_mle: lr must be > 0");
  Sgd sgd(model.parameters(), optimizer);
  Tensor inputs = Tensor::from_matrix(data.points);
  std::vector<double> history;
  history.reserve(optimizer.epochs);
  for (std::size_t epoch = 0; epoch < optimizer.epochs; ++epoch) {
    Tensor nll = sub(log_partition(model, grid), mean(pick(model.logits(inputs), labels)));
    const double value = nll.item();
    if (!std::isfinite(value)) throw TrainingDiverged(epoch + 1, epoch, {});
    sgd.step(nll);
    history.push_back(value);
  }
  return history;
}

// ---- evaluation ----------------------------------------------------------------------------

std::vector<std::size_t> predict(const PCemModel& model, const Matrix& x) {
  return argmax_rows(model.logits(Tensor::from_matrix(x)).to_matrix());
}

Accuracy evaluate_accuracy(const PCemModel& model, const Dataset2D& data,
                           const SamplerConfig& attack, std::uint64_t seed) {
  const auto& labels = require_labels(data, "evaluate_accuracy");
  Accuracy acc;
  acc.natural = fraction_correct(predict(model, data.points), labels);
  if (attack.k_steps == 0 || attack.alpha == 0.0) {
    acc.robust = acc.natural;
    return acc;
  }
  SamplerConfig pgd = attack;
  pgd.rule = Rule::kPgd;
  LabeledBatch batch(data.points, labels);
  acc.robust = fraction_correct(predict(model, pgd_attack(model, batch, pgd, seed)), labels);
  return acc;
}

Matrix class_centers(const NPCemModel& model, const Dataset2D& labeled) {
  const auto& labels = require_labels(labeled, "class_centers");
  const std::size_t k = labeled.num_classes();
  Matrix g = model.features(Tensor::from_matrix(labeled.points)).to_matrix();
  Matrix centers(k, g.cols, 0.0);
  std::vector<double> count(k, 0.0);
  for (std::size_t i = 0; i < g.rows; ++i) {
    count[labels[i]] += 1.0;
    for (std::size_t j = 0; j < g.cols; ++j) centers(labels[i], j) += g(i, j);
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] == 0.0) throw ContractError("class_centers: class without samples");
    for (std::size_t j = 0; j < g.cols; ++j) centers(c, j) /= count[c];
  }
  return centers;
}

Tensor center_logits(const NPCemModel& model, const Matrix& centers, const Tensor& x) {
  Tensor c = Tensor::from_matrix(centers);
  Tensor cross = scale(matmul(model.features(x), transpose(c)), 2.0);
  return add_row(cross, neg(sq_norm(c)));
}

Accuracy evaluate_accuracy(const NPCemModel& model, const Dataset2D& reference,
                           const Dataset2D& data, const SamplerConfig& attack,
                           std::uint64_t seed) {
  const auto& labels = require_labels(data, "evaluate_accuracy");
  const Matrix centers = class_centers(model, reference);
  LogitsFn logits = [&](const Tensor& x) { return center_logits(model, centers, x); };
  Accuracy acc;
  acc.natural =
      fraction_correct(argmax_rows(logits(Tensor::from_matrix(data.points)).to_matrix()), labels);
  if (attack.k_steps == 0 || attack.alpha == 0.0) {
    acc.robust = acc.natural;
    return acc;
  }
  Matrix adv = pgd_attack(logits, data.points, labels, attack, seed);
  acc.robust = fraction_correct(argmax_rows(logits(Tensor::from_matrix(adv)).to_matrix()), labels);
  return acc;
}

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& log) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "epoch,loss,main_loss,reg_loss,natural_acc,robust_acc\n";
  char buf[256];
  for (const auto& m : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", m.epoch, m.loss,
                  m.main_loss, m.reg_loss, m.natural_acc, m.robust_acc);
    out << buf;
  }
}

}  // namespace cem
