#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "cem/errors.hpp"
#include "cem/objectives.hpp"

using namespace cem;

namespace {

const double kLn1pE = std::log(1.0 + std::exp(1.0));  // 1.31326

PCemModel random_pcem(std::uint64_t seed, std::size_t classes = 3) {
  Rng rng(seed);
  return PCemModel::random(Encoder::mlp(2, {5}, 4, Activation::kTanh, rng), classes, rng);
}

NPCemModel random_npcem(std::uint64_t seed) {
  Rng rng(seed);
  return NPCemModel(Encoder::mlp(2, {5}, 3, Activation::kTanh, rng));
}

Matrix random_points(std::size_t n, Rng& rng, double r = 2.0) {
  std::uniform_real_distribution<double> u(-r, r);
  Matrix m(n, 2);
  for (double& v : m.data) v = u(rng);
  return m;
}

std::vector<std::size_t> random_labels(std::size_t n, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> u(0, k - 1);
  std::vector<std::size_t> y(n);
  for (auto& v : y) v = u(rng);
  return y;
}

SamplerConfig pgd(double alpha, std::size_t steps) {
  SamplerConfig c;
  c.rule = Rule::kPgd;
  c.alpha = alpha;
  c.k_steps = steps;
  return c;
}

// Central differences of `loss` in every parameter entry.
template <class Params, class Loss>
std::vector<double> numeric_param_grad(const Params& params, Loss loss, double h = 1e-6) {
  std::vector<double> out;
  for (const auto& [name, t] : params) {
    auto v = const_cast<Tensor&>(t).mutable_values();
    for (double& x : v) {
      const double keep = x;
      x = keep + h;
      const double up = loss();
      x = keep - h;
      const double down = loss();
      x = keep;
      out.push_back((up - down) / (2 * h));
    }
  }
  return out;
}

void expect_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a[i], b[i], tol * std::max(1.0, std::abs(b[i]))) << "entry " << i;
  }
}

}  // namespace

// ---- batches -------------------------------------------------------------------

TEST(Batches, LabeledBatchContracts) {
  EXPECT_THROW(LabeledBatch(Matrix(0, 2), {}), ContractError);
  EXPECT_THROW(LabeledBatch(Matrix(2, 2), {0}), ContractError);
  EXPECT_NO_THROW(LabeledBatch(Matrix(2, 2), {0, 1}));
}

TEST(Batches, PairBatchRequiresPositiveAmongNegatives) {
  Matrix a = Matrix::from_rows({{1, 0}});
  Matrix p = Matrix::from_rows({{0, 1}});
  EXPECT_THROW(PairBatch(a, p, Matrix::from_rows({{1, 0}, {2, 2}}), 2), ContractError);
  EXPECT_THROW(PairBatch(a, p, Matrix::from_rows({{0, 1}}), 0), ContractError);
  EXPECT_NO_THROW(PairBatch(a, p, Matrix::from_rows({{1, 0}, {0, 1}}), 2));
  PairBatch b = PairBatch::with_positive_first(a, p, Matrix::from_rows({{5, 5}}));
  EXPECT_EQ(b.k_neg, 2u);
  EXPECT_EQ(b.negatives_of(0), Matrix::from_rows({{0, 1}, {5, 5}}));
}

TEST(Batches, InBatchPutsOwnPositiveFirst) {
  PairBatch b = PairBatch::in_batch(Matrix::from_rows({{1, 0}, {0, 1}}),
                                    Matrix::from_rows({{3, 3}, {4, 4}}));
  EXPECT_EQ(b.k_neg, 2u);
  EXPECT_EQ(b.negatives_of(1)(0, 0), 4.0);
}

TEST(GradEstimateOps, ArithmeticAndLayout) {
  GradEstimate a, b;
  a.add("w", {1, 2});
  b.add("w", {3, 5});
  EXPECT_EQ((a + b).at("w"), (std::vector<double>{4, 7}));
  EXPECT_EQ((b - a).at("w"), (std::vector<double>{2, 3}));
  EXPECT_EQ((-a).max_abs(), 2.0);
  GradEstimate c;
  c.add("v", {0, 0});
  EXPECT_FALSE(a.matches_layout(c));
  EXPECT_THROW(a += c, ContractError);
  EXPECT_THROW(a.at("v"), ContractError);
}

// ---- supervised losses ----------------------------------------------------------

TEST(CeLoss, LinearFixtureExamples) {
  const auto model = PCemModel::fixture_lin();
  EXPECT_NEAR(ce_loss(model, LabeledBatch(Matrix::from_rows({{1, 0}}), {0})).item(),
              std::log(1 + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(ce_loss(model, LabeledBatch(Matrix::from_rows({{1, 0}}), {0})).item(), 0.31326,
              1e-5);
  for (std::size_t y : {0u, 1u}) {
    EXPECT_NEAR(ce_loss(model, LabeledBatch(Matrix::from_rows({{0, 0}}), {y})).item(),
                std::log(2.0), 1e-15);
  }
}

TEST(CeLoss, DecreasesMonotonicallyWithLogitGap) {
  const auto model = PCemModel::fixture_lin();
  double prev = std::numeric_limits<double>::infinity();
  for (double gap : {0.5, 1.0, 2.0, 5.0, 10.0, 40.0}) {
    const double loss = ce_loss(model, LabeledBatch(Matrix::from_rows({{gap, 0}}), {0})).item();
    EXPECT_LT(loss, prev);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-15);
}

TEST(CeLoss, ParameterGradientMatchesFiniteDifferences) {
  Rng rng(1);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto model = random_pcem(s);
    LabeledBatch batch(random_points(6, rng), random_labels(6, 3, rng));
    auto analytic = param_grad(model.parameters(), ce_loss(model, batch)).flat();
    auto numeric =
        numeric_param_grad(model.parameters(), [&] { return ce_loss(model, batch).item(); });
    expect_close(analytic, numeric, 1e-4);
  }
}

TEST(RobustCe, NullAttackEqualsCe) {
  Rng rng(2);
  const auto model = random_pcem(3);
  LabeledBatch batch(random_points(5, rng), random_labels(5, 3, rng));
  const double ce = ce_loss(model, batch).item();
  EXPECT_EQ(robust_ce_loss(model, batch, pgd(0.0, 5)).item(), ce);
  EXPECT_EQ(robust_ce_loss(model, batch, pgd(0.3, 0)).item(), ce);
}

TEST(RobustCe, OneStepOnLinearFixture) {
  const auto model = PCemModel::fixture_lin();
  LabeledBatch batch(Matrix::from_rows({{1, 0}}), {0});
  const double loss = robust_ce_loss(model, batch, pgd(0.1, 1)).item();
  EXPECT_NEAR(loss, 0.32801, 1e-5);
  const double p = std::exp(1.0) / (1 + std::exp(1.0));
  const double gap = 1 - 0.2 * (1 - p);
  EXPECT_NEAR(loss, std::log(1 + std::exp(-gap)), 1e-14);
}

TEST(RobustCe, AttackRaisesLossOnAlmostAllBatches) {
  Rng rng(4);
  int raised = 0;
  const int n = 200;
  for (int t = 0; t < n; ++t) {
    const auto model = random_pcem(100 + t);
    LabeledBatch batch(random_points(4, rng), random_labels(4, 3, rng));
    SamplerConfig attack = pgd(0.05, 3);
    attack.beta = 0.2;
    if (robust_ce_loss(model, batch, attack).item() >= ce_loss(model, batch).item()) ++raised;
  }
  EXPECT_GE(raised, 0.99 * n);
}

TEST(RobustCe, AttackRuleMustBePgd) {
  LabeledBatch batch(Matrix::from_rows({{1, 0}}), {0});
  SamplerConfig c = pgd(0.1, 1);
  c.rule = Rule::kCs;
  EXPECT_THROW(pgd_attack(PCemModel::fixture_lin(), batch, c), ContractError);
}

TEST(RobustCe, GenericAttackMatchesModelAttack) {
  Rng rng(5);
  const auto model = random_pcem(6);
  LabeledBatch batch(random_points(5, rng), random_labels(5, 3, rng));
  SamplerConfig c = pgd(0.1, 4);
  c.beta = 0.3;
  Matrix a = pgd_attack(model, batch, c, 9);
  Matrix b = pgd_attack([&](const Tensor& x) { return model.logits(x); }, batch.inputs,
                        batch.labels, c, 9);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-13);
}

TEST(TradesKl, Examples) {
  const auto model = PCemModel::fixture_lin();
  Tensor x = Tensor::constant({1, 2}, {0, 0});
  Tensor xh = Tensor::constant({1, 2}, {1, 0});
  EXPECT_EQ(trades_kl(model, xh, xh).item(), 0.0);
  const double p = std::exp(1.0) / (1 + std::exp(1.0));
  const double hand = p * std::log(2 * p) + (1 - p) * std::log(2 * (1 - p));
  EXPECT_NEAR(trades_kl(model, x, xh).item(), hand, 1e-14);
  EXPECT_NEAR(trades_kl(model, x, xh).item(), 0.11094, 1e-5);
}

TEST(TradesKl, NonNegativeAndZeroOnIdenticalInputs) {
  Rng rng(7);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto model = random_pcem(s);
    Tensor x = Tensor::from_matrix(random_points(4, rng));
    Tensor xh = Tensor::from_matrix(random_points(4, rng));
    EXPECT_GE(trades_kl(model, x, xh).item(), -1e-15);
    EXPECT_EQ(trades_kl(model, x, x).item(), 0.0);
  }
}

TEST(CrLoss, Examples) {
  const auto model = PCemModel::fixture_lin();
  LabeledBatch batch(Matrix::from_rows({{1, 0}}), {0});
  EXPECT_EQ(cr_loss(model, batch, Tensor::from_matrix(batch.inputs)).item(), 0.0);
  EXPECT_NEAR(cr_loss(model, batch, Tensor::constant({1, 2}, {0.9, 0})).item(), 0.01, 1e-15);
}

TEST(CrLoss, ParameterGradientVanishesWhenEnergiesAgree) {
  Rng rng(8);
  auto model = random_pcem(9);
  LabeledBatch batch(random_points(4, rng), random_labels(4, 3, rng));
  auto g = param_grad(model.parameters(), cr_loss(model, batch, Tensor::from_matrix(batch.inputs)));
  EXPECT_EQ(g.max_abs(), 0.0);
}

// ---- unsupervised losses -----------------------------------------------------------

TEST(InfoNce, IdentityEncoderExamples) {
  NPCemModel model(Encoder::identity(2));
  Matrix x = Matrix::from_rows({{1, 0}});
  EXPECT_NEAR(infonce_loss(model, PairBatch(x, x, x, 1)).item(), 0.0, 1e-15);
  PairBatch b(x, Matrix::from_rows({{0, 1}}), Matrix::from_rows({{0, 1}, {1, 0}}), 2);
  EXPECT_NEAR(infonce_loss(model, b).item(), kLn1pE, 1e-14);
  EXPECT_NEAR(infonce_loss(model, b).item(), 1.31326, 1e-5);
}

TEST(InfoNce, NonNegativeAndPermutationInvariant) {
  Rng rng(10);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto model = random_npcem(s);
    Matrix a = random_points(3, rng), p = random_points(3, rng), others = random_points(9, rng);
    PairBatch b = PairBatch::with_positive_first(a, p, others);
    const double loss = infonce_loss(model, b).item();
    EXPECT_GE(loss, 0.0);
    Matrix shuffled = b.negatives;
    for (std::size_t i = 0; i < 3; ++i) {
      std::vector<std::size_t> order{3, 1, 0, 2};
      Matrix block = b.negatives_of(i);
      for (std::size_t k = 0; k < 4; ++k) {
        std::copy(block.row(order[k]).begin(), block.row(order[k]).end(),
                  shuffled.row(i * 4 + k).begin());
      }
    }
    EXPECT_NEAR(infonce_loss(model, PairBatch(a, p, shuffled, 4)).item(), loss, 1e-13);
  }
}

TEST(AdvInfoNce, NullAttackEqualsInfoNce) {
  Rng rng(11);
  const auto model = random_npcem(12);
  Matrix a = random_points(4, rng), p = random_points(4, rng);
  PairBatch b = PairBatch::in_batch(a, p);
  EXPECT_NEAR(adv_infonce_loss(model, a, p, b.negatives, b.k_neg).item(),
              infonce_loss(model, b).item(), 1e-15);
}

TEST(AdvInfoNce, PlugInValueForSingleAnchor) {
  NPCemModel model(Encoder::identity(2));
  const Matrix adv = Matrix::from_rows({{1.07311, -0.07311}});
  const double pos = -0.07311;
  const double expected = std::log(std::exp(1.07311) + std::exp(-0.07311)) - pos;
  EXPECT_NEAR(adv_infonce_loss(model, adv, Matrix::from_rows({{0, 1}}),
                               Matrix::from_rows({{1, 0}, {0, 1}}), 2)
                  .item(),
              expected, 1e-14);
}

TEST(AdvInfoNce, MaximizingAttackRaisesLoss) {
  Rng rng(13);
  int raised = 0;
  const int n = 200;
  SamplerConfig attack;
  attack.rule = Rule::kUnsupPgd;
  attack.alpha = 0.02;
  attack.k_steps = 3;
  for (int t = 0; t < n; ++t) {
    const auto model = random_npcem(200 + t);
    Matrix a = random_points(4, rng), p = random_points(4, rng);
    PairBatch b = PairBatch::in_batch(a, p);
    Matrix adv = unsup_pgd_attack(model, a, p, p, attack, t);
    if (adv_infonce_loss(model, adv, p, b.negatives, b.k_neg).item() >=
        infonce_loss(model, b).item())
      ++raised;
  }
  EXPECT_GE(raised, 0.99 * n);
}

TEST(UcrLoss, Examples) {
  NPCemModel model(Encoder::identity(2));
  Tensor x = Tensor::constant({1, 2}, {1, 0});
  Tensor xh = Tensor::constant({1, 2}, {0.9, 0});
  EXPECT_EQ(ucr_loss(model, x, Tensor::constant({1, 2}, {0, 1}), x).item(), 0.0);
  EXPECT_EQ(ucr_loss(model, x, Tensor::constant({1, 2}, {0, 1}), xh).item(), 0.0);
  EXPECT_NEAR(ucr_loss(model, x, x, xh).item(), 0.01, 1e-15);
}

TEST(PooledInfoNce, MatchesInBatchPairForm) {
  Rng rng(14);
  const auto model = random_npcem(15);
  Matrix a = random_points(5, rng), p = random_points(5, rng);
  EXPECT_NEAR(pooled_infonce_loss(model, Tensor::from_matrix(a), p).item(),
              infonce_loss(model, PairBatch::in_batch(a, p)).item(), 1e-13);
}

// ---- full-batch oracle ------------------------------------------------------------

TEST(FullBatchInfoNce, SinglePointHasZeroGradient) {
  Rng rng(16);
  const auto model = random_npcem(17);
  Matrix x = random_points(1, rng);
  EXPECT_EQ(full_batch_infonce_grad(model, x, x).max_abs(), 0.0);
}

TEST(FullBatchInfoNce, MatchesFiniteDifferencesOfExactObjective) {
  auto model = NPCemModel(Encoder::linear(Matrix::from_rows({{0.7, 0.0}, {0.0, 0.7}})));
  const Matrix a = Matrix::from_rows({{1, 0.5}, {-0.5, 1}});
  const Matrix p = Matrix::from_rows({{0.8, 0.7}, {-0.2, 1.3}});
  auto exact = [&] {
    Tensor ga = model.features(Tensor::from_matrix(a));
    Tensor gp = model.features(Tensor::from_matrix(p));
    double total = 0.0;
    for (std::size_t i = 0; i < 2; ++i) {
      double denom = 0.0, pos = 0.0;
      for (std::size_t j = 0; j < 2; ++j) {
        const double f = ga[i * 2] * gp[j * 2] + ga[i * 2 + 1] * gp[j * 2 + 1];
        denom += std::exp(f) / 2;
        if (i == j) pos = f;
      }
      total += pos - std::log(denom);
    }
    return total / 2;
  };
  auto analytic = full_batch_infonce_grad(model, a, p).flat();
  expect_close(analytic, numeric_param_grad(model.parameters(), exact), 1e-6);
}

TEST(FullBatchInfoNce, EqualsEnumeratedMiniBatchGradient) {
  Rng rng(18);
  const auto model = random_npcem(19);
  Matrix a = random_points(6, rng), p = random_points(6, rng);
  auto full = full_batch_infonce_grad(model, a, p);
  auto mini = -param_grad(model.parameters(), infonce_loss(model, PairBatch::in_batch(a, p)));
  expect_close(full.flat(), mini.flat(), 1e-12);
}

TEST(FullBatchInfoNce, RefusesLargeSets) {
  Matrix big(kFullBatchLimit + 1, 2, 0.5);
  EXPECT_THROW(full_batch_infonce_grad(random_npcem(1), big, big), ContractError);
}

// ---- likelihood gradients -------------------------------------------------------------

TEST(PcemGrad, NaturalNegativesGiveNegativeCeGradient) {
  Rng rng(20);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto model = random_pcem(s);
    LabeledBatch batch(random_points(5, rng), random_labels(5, 3, rng));
    auto ll = pcem_ll_grad(model, batch, batch.inputs, LabelMode::kModelSoft);
    auto ce = param_grad(model.parameters(), ce_loss(model, batch));
    expect_close(ll.flat(), (-ce).flat(), 1e-12);
  }
}

TEST(PcemGrad, FrozenModelHasEmptyGradient) {
  LabeledBatch batch(Matrix::from_rows({{1, 0}}), {0});
  auto g = pcem_ll_grad(PCemModel::fixture_lin(), batch, batch.inputs, LabelMode::kModelSoft);
  EXPECT_EQ(g.max_abs(), 0.0);
}

TEST(PcemGrad, ConsistencyPlusContrastiveRecombines) {
  Rng rng(21);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto model = random_pcem(s);
    LabeledBatch batch(random_points(5, rng), random_labels(5, 3, rng));
    Matrix adv = random_points(5, rng);
    auto direct = pcem_ll_grad(model, batch, adv, LabelMode::kModelSoft);
    auto parts = pcem_consistency_grad(model, batch, adv) +
                 pcem_contrastive_grad(model, batch, adv, LabelMode::kModelSoft);
    ASSERT_TRUE(parts.matches_layout(direct));
    expect_close(parts.flat(), direct.flat(), 1e-10);
  }
}

TEST(PcemGrad, ContrastiveIsNegativeRobustCeGradient) {
  Rng rng(22);
  for (std::uint64_t s = 0; s < 5; ++s) {
    auto model = random_pcem(s);
    LabeledBatch batch(random_points(5, rng), random_labels(5, 3, rng));
    Matrix adv = random_points(5, rng);
    auto contrastive = pcem_contrastive_grad(model, batch, adv, LabelMode::kModelSoft);
    auto robust = param_grad(model.parameters(), ce_loss(model, Tensor::from_matrix(adv), batch.labels));
    expect_close(contrastive.flat(), (-robust).flat(), 1e-8);
  }
}

TEST(PcemGrad, SampledLabelsNeedRngAndAverageToSoft) {
  Rng rng(23);
  auto model = random_pcem(24);
  LabeledBatch batch(random_points(3, rng), random_labels(3, 3, rng));
  Matrix adv = random_points(3, rng);
  EXPECT_THROW(pcem_ll_grad(model, batch, adv, LabelMode::kModelSample), ContractError);
  auto soft = pcem_ll_grad(model, batch, adv, LabelMode::kModelSoft).flat();
  std::vector<double> mean(soft.size(), 0.0);
  const int draws = 4000;
  Rng label_rng(25);
  for (int d = 0; d < draws; ++d) {
    auto g = pcem_ll_grad(model, batch, adv, LabelMode::kModelSample, &label_rng).flat();
    for (std::size_t i = 0; i < g.size(); ++i) mean[i] += g[i] / draws;
  }
  double worst = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < soft.size(); ++i) {
    worst = std::max(worst, std::abs(mean[i] - soft[i]));
    scale = std::max(scale, std::abs(soft[i]));
  }
  EXPECT_LT(worst, 0.05 * std::max(1.0, scale));
}

TEST(NpcemGrad, ImportanceWeightsAverageToOne) {
  Rng rng(26);
  const auto model = random_npcem(27);
  Matrix w = importance_weights(model, random_points(4, rng), random_points(7, rng));
  ASSERT_EQ(w.rows, 4u);
  ASSERT_EQ(w.cols, 7u);
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GE(w(i, j), 0.0);
      s += w(i, j);
    }
    EXPECT_NEAR(s / 7, 1.0, 1e-10);
  }
}

TEST(NpcemGrad, SinglePairPoolCancels) {
  Rng rng(28);
  const auto model = random_npcem(29);
  Matrix a = random_points(1, rng), p = random_points(1, rng);
  EXPECT_LT(npcem_ll_grad(model, a, p, a, p).max_abs(), 1e-15);
}

TEST(NpcemGrad, PositivePoolGivesNegativePooledInfoNceGradient) {
  Rng rng(30);
  const auto model = random_npcem(31);
  Matrix a = random_points(5, rng), p = random_points(5, rng);
  auto ll = npcem_ll_grad(model, a, p, a, p);
  auto loss = param_grad(model.parameters(), pooled_infonce_loss(model, Tensor::from_matrix(a), p));
  expect_close(ll.flat(), (-loss).flat(), 1e-10);
}

TEST(NpcemGrad, ContrastiveAtNaturalAnchorsMatchesLikelihood) {
  Rng rng(32);
  const auto model = random_npcem(33);
  Matrix a = random_points(4, rng), p = random_points(4, rng);
  expect_close(npcem_contrastive_grad(model, a, p, p).flat(),
               npcem_ll_grad(model, a, p, a, p).flat(), 1e-12);
}
