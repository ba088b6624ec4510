#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "protovae/metrics.hpp"

using namespace protovae;

namespace {

std::unique_ptr<GroundTruthDataset> four_factor_toy() {
  ToyConfig t;
  t.side = 32;
  t.shapes = 3;
  t.scales = 4;
  t.pos_x = 8;
  t.pos_y = 8;
  return make_toy_grid(t);
}

std::unique_ptr<GroundTruthDataset> three_factor_toy() {
  ToyConfig t;
  t.side = 16;
  t.shapes = 3;
  t.pos_x = 6;
  t.pos_y = 6;
  return make_toy_grid(t);
}

EvalConfig quick_config() {
  EvalConfig c;
  c.global_samples = 2000;
  c.mig_samples = 4000;
  c.dci_train = 2000;
  c.dci_test = 1000;
  return c;
}

// Columns of rep reordered as out[:, j] = rep[:, perm[j]], optionally mapped through f.
RepresentationFn remap(RepresentationFn rep, std::vector<int> perm, double (*f)(double) = nullptr) {
  return [rep = std::move(rep), perm = std::move(perm), f](std::span<const std::int64_t> idx) {
    const Tensor<double> z = rep(idx);
    Tensor<double> out({z.dim(0), static_cast<int>(perm.size())});
    for (int i = 0; i < z.dim(0); ++i)
      for (int j = 0; j < static_cast<int>(perm.size()); ++j) {
        const double v = z.at(i, perm[j]);
        out.at(i, j) = f ? f(v) : v;
      }
    return out;
  };
}

RepresentationFn constant_rep(int d) {
  return [d](std::span<const std::int64_t> idx) { return Tensor<double>({static_cast<int>(idx.size()), d}, 0.25); };
}

// Fresh i.i.d. noise on every call. Keying the noise on the dataset index would
// leak structure: small toy grids repeat images inside a vote batch.
RepresentationFn noise_rep(int d, std::uint64_t seed = 77) {
  auto rng = std::make_shared<Rng>(make_stream(seed, 1));
  return [d, rng](std::span<const std::int64_t> idx) {
    Tensor<double> z({static_cast<int>(idx.size()), d});
    std::normal_distribution<double> n;
    for (auto& v : z.data()) v = n(*rng);
    return z;
  };
}

double entropy2(std::vector<double> p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h / std::log(static_cast<double>(p.size()));
}

}  // namespace

TEST(Discretize, EqualOccupancyBins) {
  const std::vector<double> v{3, 1, 2, 4};
  EXPECT_EQ(equal_occupancy_bins(v, 2), (std::vector<int>{1, 0, 0, 1}));
  EXPECT_EQ(equal_occupancy_bins(v, 4), (std::vector<int>{2, 0, 1, 3}));
  const std::vector<double> same(10, 0.7);
  EXPECT_EQ(equal_occupancy_bins(same, 5), std::vector<int>(10, 0));
  // Ties share a bin.
  EXPECT_EQ(equal_occupancy_bins(std::vector<double>{1, 1, 2, 2}, 4), (std::vector<int>{0, 0, 2, 2}));
}

TEST(Discretize, EntropyAndMutualInformation) {
  const std::vector<int> a{0, 1, 0, 1};
  const std::vector<int> b{0, 0, 1, 1};
  EXPECT_NEAR(discrete_entropy(a), std::log(2.0), 1e-12);
  EXPECT_NEAR(discrete_mutual_info(a, a), std::log(2.0), 1e-12);
  EXPECT_NEAR(discrete_mutual_info(a, b), 0.0, 1e-12);
  EXPECT_EQ(discrete_entropy(std::vector<int>{3, 3, 3}), 0.0);
  // I(X; Y) for Y = X mod 2 with X uniform on 4 values equals H(Y).
  EXPECT_NEAR(discrete_mutual_info(std::vector<int>{0, 1, 2, 3}, a), std::log(2.0), 1e-12);
}

TEST(Dci, ScoresFromImportanceMatrices) {
  double d = 0, c = 0;
  dci_scores(Tensor<double>({2, 2}, std::vector<double>{1, 0, 0, 1}), d, c);
  EXPECT_NEAR(d, 1.0, 1e-12);
  EXPECT_NEAR(c, 1.0, 1e-12);
  dci_scores(Tensor<double>({3, 3}, 1.0 / 3), d, c);
  EXPECT_NEAR(d, 0.0, 1e-12);
  EXPECT_NEAR(c, 0.0, 1e-12);
  // Row 0 is pure, row 1 splits 1:2; column 0 splits evenly, column 1 is pure.
  dci_scores(Tensor<double>({2, 2}, std::vector<double>{0.5, 0, 0.5, 1}), d, c);
  EXPECT_NEAR(d, 0.25 * 1 + 0.75 * (1 - entropy2({1.0 / 3, 2.0 / 3})), 1e-12);
  EXPECT_NEAR(c, 0.5 * 0 + 0.5 * 1, 1e-12);
  // Unused rows carry no weight.
  dci_scores(Tensor<double>({3, 2}, std::vector<double>{1, 0, 0, 1, 0, 0}), d, c);
  EXPECT_NEAR(d, 1.0, 1e-12);
}

TEST(Dci, PredictorsFitSeparableData) {
  Tensor<double> x({300, 2});
  std::vector<int> y(300);
  Rng rng = make_stream(1, 1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 300; ++i) {
    x.at(i, 0) = u(rng);
    x.at(i, 1) = u(rng);
    y[i] = x.at(i, 0) < -0.3 ? 0 : (x.at(i, 0) < 0.4 ? 1 : 2);
  }
  const auto trees = BoostedTrees::fit(x, y, 3, 100, 2, 0.1, 32);
  const auto tp = trees.predict(x);
  int tree_correct = 0;
  for (int i = 0; i < 300; ++i) tree_correct += tp[i] == y[i];
  // Thresholds snap to 32 histogram bins, so points right at a class boundary may miss.
  EXPECT_GE(tree_correct, 291);
  EXPECT_GT(trees.importance[0], 50 * trees.importance[1]);
  const auto logistic = LogisticModel::fit(x, y, 3);
  int correct = 0;
  const auto pred = logistic.predict(x);
  for (int i = 0; i < 300; ++i) correct += pred[i] == y[i];
  EXPECT_GE(correct, 285);
  const auto imp = logistic.importance();
  EXPECT_GT(imp[0], 5 * imp[1]);
}

TEST(FactorVae, PerfectAndPermuted) {
  auto ds = four_factor_toy();
  const EvalConfig c = quick_config();
  Rng r1 = make_stream(c.seed, 101), r2 = make_stream(c.seed, 101);
  const auto rep = factor_representation(*ds);
  const auto a = factorvae_metric(*ds, rep, c, r1);
  EXPECT_EQ(a.score, 1.0);
  EXPECT_EQ(a.active_dims.size(), 4u);
  const auto b = factorvae_metric(*ds, remap(rep, {2, 0, 3, 1}), c, r2);
  EXPECT_EQ(b.score, 1.0);
}

TEST(FactorVae, NoiseStaysNearChance) {
  auto ds = three_factor_toy();
  EvalConfig c = quick_config();
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng = make_stream(seed, 101);
    const auto r = factorvae_metric(*ds, noise_rep(4, seed), c, rng);
    EXPECT_GE(r.score, r.chance - 0.1) << "seed " << seed;
    EXPECT_LE(r.score, r.chance + 0.15) << "seed " << seed;
    EXPECT_GT(r.chance, 1.0 / 3 - 1e-12);
  }
}

TEST(FactorVae, CollapsedRepresentation) {
  auto ds = three_factor_toy();
  Rng rng = make_stream(0, 101);
  const auto r = factorvae_metric(*ds, constant_rep(3), quick_config(), rng);
  EXPECT_EQ(r.score, 0.0);
  EXPECT_FALSE(r.warning.empty());
  EXPECT_TRUE(r.active_dims.empty());
}

TEST(FactorVae, PrunesNearConstantDims) {
  auto ds = three_factor_toy();
  const auto rep = factor_representation(*ds);
  RepresentationFn with_dead = [&](std::span<const std::int64_t> idx) {
    const Tensor<double> z = rep(idx);
    Tensor<double> out({z.dim(0), 4});
    for (int i = 0; i < z.dim(0); ++i) {
      for (int j = 0; j < 3; ++j) out.at(i, j) = z.at(i, j);
      out.at(i, 3) = 1e-4 * z.at(i, 0);
    }
    return out;
  };
  Rng rng = make_stream(0, 101);
  const auto r = factorvae_metric(*ds, with_dead, quick_config(), rng);
  EXPECT_EQ(r.active_dims, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(r.score, 1.0);
}

TEST(Mig, Oracles) {
  auto ds = four_factor_toy();
  const auto rep = factor_representation(*ds);
  Rng r1 = make_stream(0, 102), r2 = make_stream(0, 102), r3 = make_stream(0, 102);
  const double perfect = mig(*ds, rep, 4000, 20, r1);
  EXPECT_GE(perfect, 0.99);
  EXPECT_EQ(mig(*ds, remap(rep, {3, 1, 0, 2}), 4000, 20, r2), perfect);
  EXPECT_EQ(mig(*ds, constant_rep(4), 4000, 20, r3), 0.0);
}

TEST(Mig, DuplicatedDimension) {
  auto ds = four_factor_toy();
  const auto rep = factor_representation(*ds);
  Rng r1 = make_stream(0, 102), r2 = make_stream(0, 102);
  const double base = mig(*ds, rep, 4000, 20, r1);
  const double dup = mig(*ds, remap(rep, {0, 0, 1, 2, 3}), 4000, 20, r2);
  // Factor 0 loses its gap entirely; the other three are untouched.
  EXPECT_NEAR(dup, base * 3 / 4, 0.01);
}

TEST(Mig, MonotoneTransformsBarelyMove) {
  auto ds = four_factor_toy();
  const auto rep = factor_representation(*ds);
  Rng r1 = make_stream(0, 102), r2 = make_stream(0, 102);
  const double base = mig(*ds, rep, 4000, 20, r1);
  const double warped = mig(*ds, remap(rep, {0, 1, 2, 3}, [](double v) { return std::exp(3 * v) - v * v * v; }), 4000,
                            20, r2);
  EXPECT_NEAR(warped, base, 0.02);
}

TEST(Mig, RejectsTooFewSamples) {
  auto ds = three_factor_toy();
  Rng rng = make_stream(0, 102);
  EXPECT_THROW(mig(*ds, factor_representation(*ds), 199, 20, rng), std::invalid_argument);
  EXPECT_NO_THROW(mig(*ds, factor_representation(*ds), 200, 20, rng));
}

TEST(Evaluate, OracleReportAndDeterminism) {
  auto ds = four_factor_toy();
  const EvalConfig c = quick_config();
  const auto rep = factor_representation(*ds);
  const MetricReport a = evaluate(*ds, rep, c);
  EXPECT_EQ(a.factorvae, 1.0);
  EXPECT_GE(a.mig, 0.95);
  EXPECT_GE(a.dci_disentanglement, 0.95);
  EXPECT_GE(a.dci_informativeness, 0.99);
  EXPECT_EQ(evaluate(*ds, rep, c).to_text(), a.to_text());
  const MetricReport p = evaluate(*ds, remap(rep, {1, 3, 0, 2}), c);
  EXPECT_EQ(p.factorvae, a.factorvae);
  EXPECT_EQ(p.mig, a.mig);
  EXPECT_NEAR(p.dci_disentanglement, a.dci_disentanglement, 1e-12);
  EXPECT_NEAR(p.dci_completeness, a.dci_completeness, 1e-12);
  EXPECT_NEAR(p.dci_informativeness, a.dci_informativeness, 1e-12);
  for (const auto& line : {"factorvae_score:", "mig:", "dci_disentanglement:", "seed:", "mig_bins:"})
    EXPECT_NE(a.to_text().find(line), std::string::npos) << line;
}

TEST(Evaluate, ScoresStayInUnitInterval) {
  auto ds = three_factor_toy();
  for (const auto& rep : {noise_rep(5), constant_rep(2)}) {
    const MetricReport r = evaluate(*ds, rep, quick_config());
    for (double v : {r.factorvae, r.mig, r.dci_disentanglement, r.dci_completeness, r.dci_informativeness}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}
