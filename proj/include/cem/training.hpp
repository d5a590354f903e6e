#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cem/objectives.hpp"

namespace cem {

enum class Objective { kCe, kAt, kAtTrades, kAtCr, kInfoNce, kUat, kUatUcr };

std::string to_string(Objective objective);
// Accepts ce, at, at+trades, at+cr, infonce, uat, uat+ucr.
Objective parse_objective(const std::string& name);
bool is_supervised(Objective objective);
bool uses_attack(Objective objective);

// Plain SGD with optional momentum and L2 weight decay.
struct OptimizerSpec {
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
};

struct TrainSpec {
  Objective objective = Objective::kCe;
  double reg_weight = 1.0;   // weight on TRADES / CR / UCR
  SamplerConfig attack;      // training attack (PGD or unsupervised PGD)
  SamplerConfig eval_attack; // per-epoch robust accuracy; k_steps = 0 disables
  AugmentationSet augmentations = default_augmentations();
  OptimizerSpec optimizer;
  std::uint64_t seed = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;  // total
  double main_loss = 0.0;
  double reg_loss = 0.0;
  double natural_acc = std::numeric_limits<double>::quiet_NaN();
  double robust_acc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochMetrics> log;
};

// Thrown when a loss turns non-finite. Parameters are restored to the values
// before the offending step.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t step, std::vector<EpochMetrics> log);
  std::size_t epoch() const { return epoch_; }
  std::size_t step() const { return step_; }
  const std::vector<EpochMetrics>& log() const { return log_; }

 private:
  std::size_t epoch_;
  std::size_t step_;
  std::vector<EpochMetrics> log_;
};

TrainResult train(PCemModel& model, const Dataset2D& data, const TrainSpec& spec);
// Labels, when present, are used only for the nearest-centre accuracy columns.
TrainResult train(NPCemModel& model, const Dataset2D& data, const TrainSpec& spec);

// Full-batch exact maximum likelihood of the joint p(x, y) with log Z summed
// over the grid. Returns the negative log-likelihood after each epoch.
std::vector<double> train_exact_mle(PCemModel& model, const Dataset2D& data,
                                    const GridDomain& grid, const OptimizerSpec& optimizer);

// ---- evaluation ----------------------------------------------------------------------------

struct Accuracy {
  double natural = 0.0;
  double robust = 0.0;
};

std::vector<std::size_t> predict(const PCemModel& model, const Matrix& x);
Accuracy evaluate_accuracy(const PCemModel& model, const Dataset2D& data,
                           const SamplerConfig& attack, std::uint64_t seed = 0);

// Mean feature vector per class (K x m).
Matrix class_centers(const NPCemModel& model, const Dataset2D& labeled);
// Nearest-centre scores 2 g.c_k - |c_k|^2 (argmax = nearest centre).
Tensor center_logits(const NPCemModel& model, const Matrix& centers, const Tensor& x);
// Centres come from `reference`; accuracy is measured on `data`.
Accuracy evaluate_accuracy(const NPCemModel& model, const Dataset2D& reference,
                           const Dataset2D& data, const SamplerConfig& attack,
                           std::uint64_t seed = 0);

// epoch,loss,main_loss,reg_loss,natural_acc,robust_acc
void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& log);

}  // namespace cem
