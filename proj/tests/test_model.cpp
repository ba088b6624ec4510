#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "gradcheck.hpp"
#include "protovae/optim.hpp"

using namespace protovae;
using protovae::testing::TinySetup;
using protovae::testing::tiny_dims;

namespace {

Tensor<double> mat(int rows, int cols, std::vector<double> v) { return Tensor<double>({rows, cols}, std::move(v)); }

double scalar(ad::Var<double> v) { return v.value().data()[0]; }

// KL(N(mu, exp(lv)) || N(0, 1)) by composite Simpson over z in [-12, 12].
double kl_quadrature(double mu, double lv) {
  const int n = 200000;
  const double a = -12.0;
  const double h = 24.0 / n;
  const double s2 = std::exp(lv);
  auto f = [&](double z) {
    const double logq = -0.5 * std::log(2 * std::numbers::pi * s2) - (z - mu) * (z - mu) / (2 * s2);
    const double logp = -0.5 * std::log(2 * std::numbers::pi) - z * z / 2;
    return std::exp(logq) * (logq - logp);
  };
  double sum = f(a) + f(a + n * h);
  for (int i = 1; i < n; ++i) sum += (i % 2 ? 4 : 2) * f(a + i * h);
  return sum * h / 3;
}

}  // namespace

TEST(Vae, EncodeDecodeShapesAndDeterminism) {
  TinySetup s;
  const auto post = s.models.encoder.encode(s.x);
  EXPECT_EQ(post.mu.shape(), (Shape{TinySetup::kBatch, 3}));
  EXPECT_EQ(post.log_var.shape(), (Shape{TinySetup::kBatch, 3}));
  EXPECT_EQ(s.models.encoder.encode(s.x).mu, post.mu);
  const Tensor<double> logits = s.models.decoder.decode(post.mu);
  EXPECT_EQ(logits.shape(), (Shape{TinySetup::kBatch, 8, 8, 1}));
  EXPECT_EQ(s.models.decoder.decode(post.mu), logits);
  EXPECT_THROW(s.models.decoder.decode(Tensor<double>({2, 4})), std::invalid_argument);
  EXPECT_THROW(s.models.encoder.encode(Tensor<double>({2, 16, 16, 1})), std::invalid_argument);
}

TEST(Vae, IdenticalImagesGiveIdenticalPosteriors) {
  TinySetup s;
  Tensor<double> x({2, 8, 8, 1});
  for (int i = 0; i < 64; ++i) x.data()[i] = x.data()[64 + i] = s.x.data()[i];
  const auto post = s.models.encoder.encode(x);
  for (int j = 0; j < 3; ++j) EXPECT_EQ(post.mu.at(0, j), post.mu.at(1, j));
}

TEST(Vae, Reparameterize) {
  PosteriorParams<double> p{mat(1, 2, {0.3, -0.7}), mat(1, 2, {0.5, -1.0})};
  EXPECT_EQ(reparameterize(p, mat(1, 2, {0, 0})), p.mu);
  PosteriorParams<double> prior{mat(1, 3, {0, 0, 0}), mat(1, 3, {0, 0, 0})};
  EXPECT_EQ(reparameterize(prior, mat(1, 3, {1, 1, 1})), mat(1, 3, {1, 1, 1}));
  PosteriorParams<double> three{mat(1, 2, {1.0, 2.0}), mat(1, 2, {2 * std::log(3.0), 0.0})};
  const auto z = reparameterize(three, mat(1, 2, {1, 0}));
  EXPECT_NEAR(z.at(0, 0), 4.0, 1e-12);
  EXPECT_EQ(z.at(0, 1), 2.0);
}

TEST(Vae, ReparameterizeMoments) {
  const int n = 100000;
  PosteriorParams<double> p{Tensor<double>({n, 1}, 0.7), Tensor<double>({n, 1}, 0.4)};
  Tensor<double> eps({n, 1});
  Rng rng = make_stream(17, 1);
  std::normal_distribution<double> normal;
  for (auto& v : eps.data()) v = normal(rng);
  const auto z = reparameterize(p, eps);
  double mean = 0;
  for (double v : z.data()) mean += v / n;
  double var = 0;
  for (double v : z.data()) var += (v - mean) * (v - mean) / (n - 1);
  const double sd = std::exp(0.2);
  EXPECT_LT(std::abs(mean - 0.7), 4 * sd / std::sqrt(n));
  EXPECT_LT(std::abs(var / std::exp(0.4) - 1.0), 0.05);
}

TEST(Vae, KlClosedFormAndQuadrature) {
  PosteriorParams<double> prior{mat(2, 2, {0, 0, 0, 0}), mat(2, 2, {0, 0, 0, 0})};
  EXPECT_EQ(kl_per_dim(prior), Tensor<double>({2}, std::vector<double>{0, 0}));
  PosteriorParams<double> one{mat(1, 1, {1.0}), mat(1, 1, {0.0})};
  EXPECT_DOUBLE_EQ(kl_per_dim(one).data()[0], 0.5);
  Rng rng = make_stream(21, 1);
  std::uniform_real_distribution<double> mu(-1.0, 1.0), lv(-1.5, 1.0);
  for (int t = 0; t < 10; ++t) {
    const double m = mu(rng), l = lv(rng);
    PosteriorParams<double> p{mat(1, 1, {m}), mat(1, 1, {l})};
    EXPECT_NEAR(kl_per_dim(p).data()[0], kl_quadrature(m, l), 1e-6);
  }
}

TEST(Vae, ElboHandValue) {
  ad::Graph<double> g;
  const Tensor<double> x({1, 1, 1, 2}, std::vector<double>{1, 0});
  PosteriorVars<double> post{g.constant(mat(1, 2, {0, 0})), g.constant(mat(1, 2, {0, 0}))};
  const double lv = scalar(elbo_loss(x, g.constant(Tensor<double>({1, 1, 1, 2})), post));
  EXPECT_NEAR(lv, -2 * std::log(2.0), 1e-12);
  EXPECT_THROW(elbo_loss(Tensor<double>({1, 1, 1, 2}, std::vector<double>{1.5, 0}),
                         g.constant(Tensor<double>({1, 1, 1, 2})), post),
               std::invalid_argument);
}

TEST(Vae, ElboApproachesZeroWithConfidentLogits) {
  ad::Graph<double> g;
  const Tensor<double> x({1, 1, 1, 2}, std::vector<double>{1, 0});
  PosteriorVars<double> post{g.constant(mat(1, 2, {0, 0})), g.constant(mat(1, 2, {0, 0}))};
  const double lv = scalar(elbo_loss(x, g.constant(Tensor<double>({1, 1, 1, 2}, std::vector<double>{40, -40})), post));
  EXPECT_LE(lv, 0.0);
  EXPECT_GT(lv, -1e-15);
}

TEST(Vae, LogVarIsClamped) {
  TinySetup s;
  for (auto& p : s.models.encoder.params())
    for (auto& v : p.value.data()) v *= 50;
  const auto post = s.models.encoder.encode(s.x);
  for (double v : post.log_var.data()) {
    EXPECT_GE(v, kLogVarMin);
    EXPECT_LE(v, kLogVarMax);
  }
}

TEST(Episodes, InterveneHandValues) {
  const Tensor<double> z = mat(2, 2, {0.5, -1.2, 2.0, 0.3});
  const std::vector<int> swap{1, 0};
  EXPECT_EQ(intervene(z, 0, swap), mat(2, 2, {2.0, -1.2, 0.5, 0.3}));
  EXPECT_THROW(intervene(mat(1, 2, {0, 0}), 0, std::vector<int>{0}), std::invalid_argument);
  EXPECT_THROW(intervene(z, 2, swap), std::out_of_range);
  // Duplicated rows: a valid but degenerate intervention.
  const Tensor<double> dup = mat(2, 2, {1, 2, 1, 2});
  EXPECT_EQ(intervene(dup, 1, swap), dup);
}

TEST(Episodes, DerangementHasNoFixedPoints) {
  Rng rng = make_stream(3, 3);
  for (int n = 2; n < 40; ++n) {
    const auto p = random_derangement(n, rng);
    std::vector<int> seen(n, 0);
    for (int i = 0; i < n; ++i) {
      EXPECT_NE(p[i], i);
      ++seen[p[i]];
    }
    for (int c : seen) EXPECT_EQ(c, 1);
  }
  EXPECT_THROW(random_derangement(1, rng), std::invalid_argument);
}

TEST(Episodes, StructureForTwoDimsThreeExamples) {
  ModelDims d = tiny_dims();
  d.latent_dim = 2;
  nn::InitRng init = make_stream(1, kInitStream);
  Decoder<double> dec(d, init);
  Rng rng = make_stream(2, 2);
  const InterventionPlan plan = make_plan(3, 2, rng);
  ad::Graph<double> g;
  const Tensor<double> z = mat(3, 2, {0.1, 0.2, -0.3, 0.4, 0.5, -0.6});
  const Episode<double> ep = build_episode_frozen(g.constant(z), plan, dec);
  EXPECT_EQ(ep.layout.rows(), 3 * (2 + 2));
  EXPECT_EQ(ep.logits.dim(0), 12);
  EXPECT_EQ(ep.pairs.dim(0), 2 * 3 + 3);
  EXPECT_EQ(ep.pairs.dim(1), 2);
  EXPECT_EQ(ep.labels.size(), 3u);
  for (int l : ep.labels) EXPECT_TRUE(l == 0 || l == 1);
  EXPECT_EQ(ep.isometry_targets.value().shape(), (Shape{3, 2}));
  // The original half of every support pair for example i is the same decoded image.
  const Tensor<double>& pairs = ep.pairs.value();
  const int hw = 64;
  for (int i = 0; i < 3; ++i)
    for (int p = 0; p < hw; ++p)
      EXPECT_EQ(pairs.data()[(0 * 3 + i) * 2 * hw + p], pairs.data()[(1 * 3 + i) * 2 * hw + p]);
}

TEST(Episodes, RejectsBadPlans) {
  ModelDims d = tiny_dims();
  nn::InitRng init = make_stream(1, kInitStream);
  Decoder<double> dec(d, init);
  Rng rng = make_stream(2, 2);
  InterventionPlan plan = make_plan(3, 3, rng);
  plan.donor_permutation = {0, 2, 1};
  ad::Graph<double> g;
  EXPECT_THROW(build_episode_frozen(g.constant(Tensor<double>({3, 3})), plan, dec), std::invalid_argument);
  EXPECT_THROW(build_episode_frozen(g.constant(Tensor<double>({3, 4})), make_plan(3, 3, rng), dec),
               std::invalid_argument);
}

TEST(ProtoMetric, Prototypes) {
  ad::Graph<double> g;
  EXPECT_EQ(compute_prototypes(g.constant(mat(2, 2, {1, 3, 3, 5})), 1).value(), mat(1, 2, {2, 4}));
  EXPECT_EQ(compute_prototypes(g.constant(mat(2, 2, {1, 3, 3, 5})), 2).value(), mat(2, 2, {1, 3, 3, 5}));
  // Permuting the examples within a support set leaves the prototype unchanged.
  EXPECT_EQ(compute_prototypes(g.constant(mat(4, 1, {1, 2, 3, 4})), 2).value(),
            compute_prototypes(g.constant(mat(4, 1, {2, 1, 4, 3})), 2).value());
}

TEST(ProtoMetric, ClassProbs) {
  const auto uniform = class_probs(mat(1, 3, {0, 0, 0}), mat(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}),
                                   Distance::kSquaredEuclidean);
  for (double p : uniform.data()) EXPECT_NEAR(p, 1.0 / 3, 1e-12);
  const auto two = class_probs(mat(1, 1, {0}), mat(2, 1, {0, 1}), Distance::kSquaredEuclidean);
  EXPECT_NEAR(two.data()[0], 1 / (1 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(two.data()[1], 0.2689414213699951, 1e-12);
  const auto far = class_probs(mat(1, 1, {0}), mat(2, 1, {0, 1e3}), Distance::kSquaredEuclidean);
  EXPECT_NEAR(far.data()[0], 1.0, 1e-12);
  // Adding a constant to every distance: shift the query along an orthogonal axis.
  const auto a = class_probs(mat(1, 2, {0.3, 0}), mat(2, 2, {0, 0, 1, 0}), Distance::kSquaredEuclidean);
  const auto b = class_probs(mat(1, 2, {0.3, 5}), mat(2, 2, {0, 0, 1, 0}), Distance::kSquaredEuclidean);
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(a.data()[k], b.data()[k], 1e-9);
}

TEST(ProtoMetric, UniquenessHandValues) {
  ad::Graph<double> g;
  const std::vector<int> label{0};
  const double lu = scalar(uniqueness_loss(g.constant(mat(1, 1, {0})), g.constant(mat(2, 1, {0, 1})),
                                           std::span<const int>(label), g.constant(Tensor<double>({2}, std::vector<double>{0.5, 7.0}))));
  EXPECT_NEAR(lu, 0.5 * std::log(1 + std::exp(-1.0)), 1e-12);
  const double zero = scalar(uniqueness_loss(g.constant(mat(1, 1, {0})), g.constant(mat(2, 1, {0, 1})),
                                             std::span<const int>(label), g.constant(Tensor<double>({2}))));
  EXPECT_EQ(zero, 0.0);
}

TEST(ProtoMetric, UniquenessPermutationInvariant) {
  ad::Graph<double> g;
  const auto q = g.constant(mat(3, 2, {0.1, 0.2, -0.4, 0.3, 0.9, -0.5}));
  const std::vector<int> labels{0, 2, 1};
  const std::vector<int> permuted{2, 1, 0};  // class k -> perm[k] with perm = (2, 0, 1)
  const double a = scalar(uniqueness_loss(q, g.constant(mat(3, 2, {0, 0, 1, 0, 0, 1})), std::span<const int>(labels),
                                          g.constant(Tensor<double>({3}, std::vector<double>{0.2, 0.5, 1.5}))));
  const double b = scalar(uniqueness_loss(q, g.constant(mat(3, 2, {1, 0, 0, 1, 0, 0})), std::span<const int>(permuted),
                                          g.constant(Tensor<double>({3}, std::vector<double>{0.5, 1.5, 0.2}))));
  EXPECT_NEAR(a, b, 1e-12);
}

TEST(ProtoMetric, ConsistencyHandValues) {
  ad::Graph<double> g;
  // d = 3 dims, B = 2 examples; every support embedding of an example is identical.
  const auto support = g.constant(mat(6, 1, {1, 2, 1, 2, 1, 2}));
  const std::vector<int> examples{0, 1};
  const std::vector<int> labels{2, 0};
  const auto w = g.constant(Tensor<double>({3}, std::vector<double>{0.4, 9.0, 1.2}));
  const double lc = scalar(consistency_loss(g.constant(mat(2, 1, {0.3, -0.7})), support,
                                            std::span<const int>(examples), std::span<const int>(labels), w));
  EXPECT_NEAR(lc, (1.2 + 0.4) / 2 * std::log(3.0), 1e-12);
  const double zero = scalar(consistency_loss(g.constant(mat(2, 1, {0.3, -0.7})), support,
                                              std::span<const int>(examples), std::span<const int>(labels),
                                              g.constant(Tensor<double>({3}))));
  EXPECT_EQ(zero, 0.0);
  const std::vector<int> bad{0, 5};
  EXPECT_THROW(consistency_loss(g.constant(mat(2, 1, {0.3, -0.7})), support, std::span<const int>(bad),
                                std::span<const int>(labels), w),
               std::invalid_argument);
}

TEST(ProtoMetric, ProtoAndIsometryLoss) {
  ad::Graph<double> g;
  EXPECT_NEAR(scalar(proto_loss(g.constant(Tensor<double>({1}, 0.1566)), g.constant(Tensor<double>({1}, 0.6931)))),
              0.8497, 1e-12);
  const auto t = g.constant(mat(1, 3, {0.5, 0, 0}));
  EXPECT_EQ(scalar(isometry_loss(t, t)), 0.0);
  EXPECT_NEAR(scalar(isometry_loss(g.constant(mat(1, 3, {1.5, 0, 0})), t)), 1.0, 1e-12);
}

TEST(ProtoMetric, TrunkIsSharedAndHeadsAreSeparate) {
  TinySetup s;
  Tensor<double> pairs({2, 8, 8, 2});
  for (std::size_t i = 0; i < pairs.size(); ++i) pairs.data()[i] = 0.5 + 0.4 * std::sin(0.37 * i);
  auto outputs = [&] {
    ad::Graph<double> g;
    auto o = s.models.proto.forward_frozen(g, g.constant(to_nchw(pairs)));
    return std::pair{o.embedding.value(), o.isometry.value()};
  };
  const auto [e0, i0] = outputs();
  auto nudge = [&](const char* name) {
    double& v = s.models.proto.params().at(name).value.data()[0];
    const double saved = v;
    v += 0.3;
    auto out = outputs();
    v = saved;
    return out;
  };
  const auto [e1, i1] = nudge("proto.conv0.w");
  EXPECT_NE(e1, e0);
  EXPECT_NE(i1, i0);
  const auto [e2, i2] = nudge("proto.embed.w");
  EXPECT_NE(e2, e0);
  EXPECT_EQ(i2, i0);
  const auto [e3, i3] = nudge("proto.iso.w");
  EXPECT_EQ(e3, e0);
  EXPECT_NE(i3, i0);
}

TEST(Adversary, ChanceLevelValues) {
  ModelDims d = tiny_dims();
  nn::InitRng init = make_stream(1, kInitStream);
  Discriminator<double> disc(d, init);
  const auto scores = disc_score(disc, mat(2, 3, {0.1, -2, 3, 0, 0, 1}));
  for (double v : scores.data()) EXPECT_EQ(v, 0.5);
  ad::Graph<double> g;
  const auto zero = g.constant(Tensor<double>({4}));
  EXPECT_NEAR(scalar(disc_loss(zero, zero)), 2 * std::log(2.0), 1e-12);
  EXPECT_NEAR(scalar(encoder_adv_loss(zero)), -std::log(2.0), 1e-12);
  EXPECT_THROW(disc_score(disc, mat(1, 2, {0, 0})), std::invalid_argument);
}

TEST(Adversary, StableForLargeLogits) {
  ad::Graph<double> g;
  const auto big = g.constant(Tensor<double>({3}, std::vector<double>{-50, 0, 50}));
  EXPECT_TRUE(std::isfinite(scalar(disc_loss(big, big))));
  EXPECT_TRUE(std::isfinite(scalar(encoder_adv_loss(big))));
  // Perfect discriminator: real logits very negative, intervened very positive.
  const double perfect = scalar(disc_loss(g.constant(Tensor<double>({2}, -50.0)), g.constant(Tensor<double>({2}, 50.0))));
  EXPECT_LT(perfect, 1e-20);
  // The encoder term saturates at the guard.
  EXPECT_NEAR(scalar(encoder_adv_loss(g.constant(Tensor<double>({1}, 50.0)))),
              -(kAdvLogitGuard + std::log1p(std::exp(-kAdvLogitGuard))), 1e-12);
}

TEST(Adversary, IdenticalBatchesStayAtChance) {
  ModelDims d = tiny_dims();
  nn::InitRng init = make_stream(5, kInitStream);
  Discriminator<double> disc(d, init);
  Adam<double> opt({1e-3, 0.5, 0.9}, {&disc.params()});
  Rng rng = make_stream(6, 1);
  std::normal_distribution<double> normal;
  Tensor<double> z({64, 3});
  for (auto& v : z.data()) v = normal(rng);
  double loss = 0;
  for (int step = 0; step < 300; ++step) {
    disc.params().zero_grad();
    ad::Graph<double> g;
    const auto c = g.constant(z);
    auto l = disc_loss(disc.logits(g, c), disc.logits(g, c));
    loss = scalar(l);
    g.backward(l);
    opt.step();
  }
  EXPECT_NEAR(loss, 2 * std::log(2.0), 1e-6);
  const auto s = disc_score(disc, z);
  double mean = 0;
  for (double v : s.data()) mean += v / 64;
  EXPECT_NEAR(mean, 0.5, 0.05);
}
