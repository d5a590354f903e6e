#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "cem/errors.hpp"
#include "cem/models.hpp"

using namespace cem;

namespace {

std::vector<double> v2(double a, double b) { return {a, b}; }

PCemModel random_pcem(std::uint64_t seed, std::size_t classes = 3) {
  Rng rng(seed);
  return PCemModel::random(Encoder::mlp(2, {5}, 4, Activation::kTanh, rng), classes, rng);
}

std::vector<double> random_point(Rng& rng) {
  std::uniform_real_distribution<double> u(-3, 3);
  return {u(rng), u(rng)};
}

}  // namespace

TEST(PCemEnergy, LinearFixtureExamples) {
  const auto model = PCemModel::fixture_lin();
  EXPECT_DOUBLE_EQ(energy_pcem(model, v2(1, 0), 0), 1.0);
  EXPECT_DOUBLE_EQ(energy_pcem(model, v2(1, 0), 1), 0.0);
  EXPECT_DOUBLE_EQ(energy_pcem(model, v2(0, 0), 0), 0.0);
  EXPECT_DOUBLE_EQ(energy_pcem(model, v2(0, 0), 1), 0.0);
}

TEST(PCemEnergy, ClassOutOfRangeThrows) {
  EXPECT_THROW(energy_pcem(PCemModel::fixture_lin(), v2(1, 0), 2), ContractError);
}

TEST(PCemEnergy, DifferentiableInInputAndWeights) {
  const PCemModel model(Encoder::identity(2), Tensor::variable({2, 2}, {1, 0, 0, 1}));
  Tensor x = Tensor::vector({1.0, 0.5}, true);
  Tensor f = energy_pcem(model, x, 1);
  auto gx = gradient(f, x);
  EXPECT_DOUBLE_EQ(gx[0], 0.0);
  EXPECT_DOUBLE_EQ(gx[1], 1.0);
  auto gw = gradient(f, model.class_weights());
  EXPECT_EQ(gw, (std::vector<double>{0, 1, 0, 0.5}));
}

TEST(NPCemEnergy, IdentityEncoderExamples) {
  NPCemModel model(Encoder::identity(2));
  EXPECT_DOUBLE_EQ(energy_npcem(model, v2(1, 0), v2(0, 1)), 0.0);
  EXPECT_DOUBLE_EQ(energy_npcem(model, v2(1, 0), v2(1, 0)), 1.0);
  EXPECT_DOUBLE_EQ(energy_npcem(model, v2(1, 2), v2(3, 4)), 11.0);
}

TEST(NPCemEnergy, DimensionMismatchThrows) {
  NPCemModel model(Encoder::identity(2));
  std::vector<double> three{1, 2, 3};
  EXPECT_THROW(energy_npcem(model, v2(1, 0), three), ContractError);
}

TEST(CondLabelProb, LinearFixtureExamples) {
  const auto model = PCemModel::fixture_lin();
  auto p = cond_label_prob(model, v2(1, 0));
  EXPECT_NEAR(p[0], 0.73106, 1e-5);
  EXPECT_NEAR(p[1], 0.26894, 1e-5);
  EXPECT_NEAR(p[0], std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
  p = cond_label_prob(model, v2(0, 0));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  for (double t : {-2.0, 0.3, 7.0}) {
    p = cond_label_prob(model, v2(t, t));
    EXPECT_NEAR(p[0], 0.5, 1e-15);
    EXPECT_NEAR(p[1], 0.5, 1e-15);
  }
}

TEST(MarginalScore, LinearFixtureExamples) {
  const auto model = PCemModel::fixture_lin();
  EXPECT_NEAR(marginal_score(model, v2(1, 0)), 1.31326, 1e-5);
  EXPECT_NEAR(marginal_score(model, v2(0, 0)), std::log(2.0), 1e-15);
  PCemModel single(Encoder::identity(2), Tensor::variable({2, 1}, {1, 0}));
  EXPECT_DOUBLE_EQ(marginal_score(single, v2(1, 0)), 1.0);
}

TEST(ExactPartition, TwoPointGrid) {
  const auto model = PCemModel::fixture_lin();
  GridDomain grid(Matrix::from_rows({{1, 0}, {0, 1}}), 1.0);
  const Partition z = exact_partition(model, grid);
  EXPECT_NEAR(z.z, 2 * std::exp(1.0) + 2, 1e-12);
  EXPECT_NEAR(z.z, 7.43656, 1e-5);
  EXPECT_NEAR(z.log_z, std::log(z.z), 1e-14);
  EXPECT_NEAR(log_partition(model, grid).item(), z.log_z, 1e-14);

  GridDomain origin(Matrix::from_rows({{0, 0}}), 1.0);
  EXPECT_DOUBLE_EQ(exact_partition(model, origin).z, 2.0);
}

TEST(ExactPartition, RejectsBadGrids) {
  EXPECT_THROW(GridDomain(Matrix::from_rows({{0, 0}}), 0.0), ContractError);
  GridDomain empty;
  EXPECT_THROW(exact_partition(PCemModel::fixture_lin(), empty), ContractError);
}

TEST(ExactPartition, PositiveAndLogStableForLargeEnergies) {
  PCemModel big(Encoder::identity(2), Tensor::variable({2, 2}, {400, 0, 0, 400}));
  GridDomain grid(Matrix::from_rows({{1, 0}, {0, 1}}), 1.0);
  const Partition z = exact_partition(big, grid);
  EXPECT_TRUE(std::isfinite(z.log_z));
  EXPECT_NEAR(z.log_z, 400 + std::log(2.0 + 2.0 * std::exp(-400.0)), 1e-9);
  for (std::uint64_t s = 0; s < 5; ++s) {
    EXPECT_GT(exact_partition(random_pcem(s), GridDomain::square(-1, 1, 5)).z, 0.0);
  }
}

TEST(ExactJointGrid, TwoPointGrid) {
  const auto model = PCemModel::fixture_lin();
  GridDomain grid(Matrix::from_rows({{1, 0}, {0, 1}}), 1.0);
  Matrix p = exact_joint_grid(model, grid);
  const double z = 2 * std::exp(1.0) + 2;
  EXPECT_NEAR(p(0, 0), std::exp(1.0) / z, 1e-15);
  EXPECT_NEAR(p(0, 0), 0.36553, 1e-5);
  EXPECT_NEAR(p(0, 1), 0.13447, 1e-5);
  EXPECT_NEAR(std::accumulate(p.data.begin(), p.data.end(), 0.0), 1.0, 1e-15);
}

TEST(GridDomain, DefaultGeometry) {
  GridDomain g = GridDomain::default_2d();
  EXPECT_EQ(g.points.rows, 41u * 41u);
  EXPECT_NEAR(g.cell_weight, (6.0 / 40) * (6.0 / 40), 1e-15);
  EXPECT_DOUBLE_EQ(g.points(0, 0), -3.0);
  EXPECT_DOUBLE_EQ(g.points(g.points.rows - 1, 1), 3.0);
}

// ---- properties on random models ----------------------------------------------

TEST(PCemProperties, EnergyEqualsLogitEntry) {
  Rng rng(21);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto model = random_pcem(s);
    const auto x = random_point(rng);
    Tensor h = model.logits(Tensor::constant({1, 2}, x));
    for (std::size_t y = 0; y < model.num_classes(); ++y) {
      EXPECT_NEAR(energy_pcem(model, x, y), h[y], 1e-12);
    }
  }
}

TEST(PCemProperties, CondProbIsExpOfEnergyMinusScore) {
  Rng rng(22);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto model = random_pcem(s, 4);
    const auto x = random_point(rng);
    const auto p = cond_label_prob(model, x);
    const double score = marginal_score(model, x);
    double total = 0.0;
    for (std::size_t y = 0; y < p.size(); ++y) {
      EXPECT_GT(p[y], 0.0);
      EXPECT_NEAR(p[y], std::exp(energy_pcem(model, x, y) - score), 1e-10);
      total += p[y];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(PCemProperties, JointMarginalMatchesScore) {
  const GridDomain grid = GridDomain::square(-2, 2, 9);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto model = random_pcem(s);
    const Matrix joint = exact_joint_grid(model, grid);
    const auto marginal = exact_marginal_grid(model, grid);
    const Partition z = exact_partition(model, grid);
    double table = 0.0;
    for (std::size_t i = 0; i < grid.points.rows; ++i) {
      double row = 0.0;
      for (std::size_t k = 0; k < joint.cols; ++k) row += joint(i, k);
      table += row;
      const double expected =
          std::exp(marginal_score(model, grid.points.row(i)) - z.log_z) * grid.cell_weight;
      EXPECT_NEAR(row, expected, 1e-10);
      EXPECT_NEAR(marginal[i], row, 1e-14);
    }
    EXPECT_NEAR(table, 1.0, 1e-10);
  }
}

TEST(NPCemProperties, Symmetric) {
  Rng rng(23);
  NPCemModel model(Encoder::mlp(2, {6, 6}, 3, Activation::kTanh, rng));
  for (int t = 0; t < 50; ++t) {
    const auto a = random_point(rng), b = random_point(rng);
    EXPECT_NEAR(energy_npcem(model, a, b), energy_npcem(model, b, a), 1e-12);
  }
}

TEST(EncoderProperties, DeterministicWithFixedWidth) {
  Rng rng(24);
  Encoder enc = Encoder::default_mlp(2, rng);
  EXPECT_EQ(enc.feature_dim(), 16u);
  Tensor x = Tensor::constant({3, 2}, {0.1, 0.2, -1, 2, 3, -3});
  Tensor a = enc.forward(x), b = enc.forward(x);
  EXPECT_EQ(a.shape(), (Shape{3, 16}));
  EXPECT_EQ(std::vector<double>(a.values().begin(), a.values().end()),
            std::vector<double>(b.values().begin(), b.values().end()));
}

TEST(EncoderProperties, InitialWeightScaleFollowsFanIn) {
  Rng rng(25);
  Encoder enc = Encoder::mlp(2, {400}, 400, Activation::kTanh, rng);
  const auto& w = enc.layers()[2].weight;  // 400 x 400
  double ss = 0.0;
  for (double v : w.values()) ss += v * v;
  EXPECT_NEAR(ss / w.size(), 1.0 / 400, 0.05 / 400);
}

TEST(EncoderProperties, ArchitectureRoundTrip) {
  Rng rng(26);
  Encoder enc = Encoder::mlp(2, {7, 5}, 3, Activation::kRelu, rng);
  Encoder back = Encoder::from_architecture(enc.architecture());
  EXPECT_EQ(back.architecture(), enc.architecture());
  EXPECT_EQ(back.feature_dim(), 3u);
  EXPECT_THROW(Encoder::from_architecture("nonsense"), ContractError);
}

TEST(Weights, PCemRoundTripIsExact) {
  const auto model = random_pcem(31);
  const auto path = (std::filesystem::temp_directory_path() / "cem_models_p.cemw").string();
  save_weights(path, model);
  LoadedModel loaded = load_weights(path);
  ASSERT_EQ(loaded.kind, ModelKind::kPCem);
  const auto a = model.parameters(), b = loaded.pcem.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(a[i].second.shape(), b[i].second.shape());
    for (std::size_t j = 0; j < a[i].second.size(); ++j) {
      EXPECT_EQ(a[i].second[j], b[i].second[j]);
    }
  }
  std::filesystem::remove(path);
}

TEST(Weights, NPCemRoundTripKeepsKind) {
  Rng rng(32);
  NPCemModel model(Encoder::mlp(2, {4}, 3, Activation::kTanh, rng));
  const auto path = (std::filesystem::temp_directory_path() / "cem_models_np.cemw").string();
  save_weights(path, model);
  LoadedModel loaded = load_weights(path);
  EXPECT_EQ(loaded.kind, ModelKind::kNPCem);
  EXPECT_DOUBLE_EQ(energy_npcem(loaded.npcem, v2(0.3, -1), v2(2, 1)),
                   energy_npcem(model, v2(0.3, -1), v2(2, 1)));
  std::filesystem::remove(path);
}

TEST(Weights, CorruptFileIsRejected) {
  const auto path = (std::filesystem::temp_directory_path() / "cem_models_bad.cemw").string();
  {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    std::fputs("NOPE", f);
    std::fclose(f);
  }
  EXPECT_ANY_THROW(load_weights(path));
  std::filesystem::remove(path);
  EXPECT_ANY_THROW(load_weights(path));
}

TEST(Clone, IsIndependentOfOriginal) {
  auto model = random_pcem(33);
  auto copy = model.clone();
  const double before = energy_pcem(copy, v2(0.5, 0.5), 0);
  auto params = model.parameters();
  for (auto& [name, t] : params) {
    for (double& v : t.mutable_values()) v += 1.0;
  }
  EXPECT_EQ(energy_pcem(copy, v2(0.5, 0.5), 0), before);
  EXPECT_NE(energy_pcem(model, v2(0.5, 0.5), 0), before);
}
