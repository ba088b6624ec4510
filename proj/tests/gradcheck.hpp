#pragma once

// Central-difference gradient checks on tiny 64-bit networks, shared by the
// unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "protovae/adversary.hpp"
#include "protovae/autodiff.hpp"
#include "protovae/episodes.hpp"
#include "protovae/ops.hpp"
#include "protovae/proto_metric.hpp"
#include "protovae/synth_data.hpp"
#include "protovae/trainer.hpp"
#include "protovae/vae.hpp"

namespace protovae::testing {

struct GradCheckResult {
  double max_rel_err = 0;
  std::string worst;
  int checked = 0;
};

// rel = |a - n| / max(|a|, |n|, floor * max(1, |L|)). Finite-difference
// round-off grows with the objective value L; the floor keeps it from
// dominating near-zero gradients.
inline GradCheckResult grad_check(const std::function<ad::Var<double>(ad::Graph<double>&)>& build,
                                  const std::vector<ad::Parameter<double>*>& targets, int max_per_tensor = 48,
                                  double h = 1e-6, double floor = 1e-6) {
  for (auto* p : targets) p->grad = Tensor<double>(p->value.shape());
  double value = 0;
  {
    ad::Graph<double> g;
    ad::Var<double> root = build(g);
    value = root.value().data()[0];
    g.backward(root);
  }
  floor *= std::max(1.0, std::abs(value));
  auto eval = [&] {
    ad::Graph<double> g;
    return build(g).value().data()[0];
  };
  GradCheckResult res;
  for (auto* p : targets) {
    const auto n = static_cast<int>(p->value.size());
    const int stride = std::max(1, n / max_per_tensor);
    for (int i = 0; i < n; i += stride) {
      const double saved = p->value.data()[i];
      p->value.data()[i] = saved + h;
      const double up = eval();
      p->value.data()[i] = saved - h;
      const double down = eval();
      p->value.data()[i] = saved;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.data()[i];
      const double err = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), floor});
      ++res.checked;
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  return res;
}

// d = 3, 8x8 single-channel images, two conv blocks.
inline ModelDims tiny_dims() {
  ModelDims d;
  d.height = 8;
  d.width = 8;
  d.channels = 1;
  d.latent_dim = 3;
  d.metric_dim = 4;
  d.conv_channels = {3, 4};
  d.dense_width = 8;
  d.disc_width = 8;
  d.disc_layers = 2;
  return d;
}

struct TinySetup {
  static constexpr int kBatch = 4;

  explicit TinySetup(std::uint64_t seed = 3, ProtoOptions options = {})
      : dims(tiny_dims()), models(dims, seed), opt(options) {
    Rng rng = make_stream(seed, 99);
    // Zero-initialized heads would make several checks vacuous; move off that point.
    std::normal_distribution<double> jitter(0.0, 0.1);
    for (auto* set : {&models.encoder.params(), &models.decoder.params(), &models.proto.params(),
                      &models.disc.params()})
      for (auto& p : *set)
        for (auto& v : p.value.data()) v += jitter(rng);
    ToyConfig toy;
    toy.side = 8;
    toy.pos_x = 3;
    toy.pos_y = 3;
    toy.scale_min = 0.15;
    toy.scale_max = 0.15;
    toy.smooth = true;
    auto ds = make_toy_grid(toy);
    x = ds->images(sample_indices(*ds, kBatch, rng)).cast<double>();
    // Keep BCE targets strictly inside (0, 1) so every pixel contributes.
    for (auto& v : x.data()) v = 0.05 + 0.9 * v;
    x_in.name = "input.x";
    x_in.value = x;
    eps = Tensor<double>({kBatch, dims.latent_dim});
    std::normal_distribution<double> normal;
    for (auto& v : eps.data()) v = normal(rng);
    z_in.name = "input.z";
    z_in.value = Tensor<double>({kBatch, dims.latent_dim});
    for (auto& v : z_in.value.data()) v = normal(rng);
    plan = make_plan(kBatch, dims.latent_dim, rng);
    ad::Graph<double> g;
    kl_fixed = kl_per_dim(models.encoder.forward(g, g.constant(x))).value();
  }

  static std::vector<ad::Parameter<double>*> group(ad::ParamSet<double>& set) {
    std::vector<ad::Parameter<double>*> out;
    for (auto& p : set) out.push_back(&p);
    return out;
  }

  template <typename... Sets>
  static std::vector<ad::Parameter<double>*> groups(Sets&... sets) {
    std::vector<ad::Parameter<double>*> out;
    (
        [&] {
          auto g = group(sets);
          out.insert(out.end(), g.begin(), g.end());
        }(),
        ...);
    return out;
  }

  // Posterior and sample built from the trainable input leaf.
  std::pair<PosteriorVars<double>, ad::Var<double>> encode(ad::Graph<double>& g) {
    PosteriorVars<double> post = models.encoder.forward(g, g.param(x_in));
    return {post, reparameterize(post, eps)};
  }

  ad::Var<double> neg_elbo(ad::Graph<double>& g) {
    auto [post, z] = encode(g);
    ad::Var<double> logits = models.decoder.forward_nchw(g, z);
    return ad::add(reconstruction_nll(to_nchw(x), logits), ad::sum(kl_per_dim(post)));
  }

  ad::Var<double> l_e(ad::Graph<double>& g) {
    auto [post, z] = encode(g);
    return encoder_adv_loss(models.disc.logits(g, z));
  }

  struct EpisodeTerms {
    ad::Var<double> l_p;
    ad::Var<double> l_i;
  };

  EpisodeTerms episode_terms(ad::Graph<double>& g) {
    auto [post, z] = encode(g);
    const int d = dims.latent_dim;
    Episode<double> ep = build_episode(z, plan, models.decoder);
    const int supports = ep.layout.num_support_pairs();
    PairOutputs<double> net = models.proto.forward(g, ep.pairs);
    ad::Var<double> support = ad::slice_rows(net.embedding, 0, supports);
    ad::Var<double> query = ad::slice_rows(net.embedding, supports, supports + kBatch);
    // Detached weights are constants of the objective, so hold them fixed under perturbation too.
    ad::Var<double> kl = opt.kl_weight_gradient ? kl_per_dim(post) : g.constant(kl_fixed);
    ad::Var<double> l_u =
        uniqueness_loss(query, compute_prototypes(support, d), std::span<const int>(ep.labels), kl, opt);
    ad::Var<double> l_c = consistency_loss(query, support, std::span<const int>(ep.query_examples),
                                           std::span<const int>(ep.labels), kl, opt);
    return {proto_loss(l_u, l_c),
            isometry_loss(ad::slice_rows(net.isometry, supports, supports + kBatch), ep.isometry_targets)};
  }

  ad::Var<double> l_p(ad::Graph<double>& g) { return episode_terms(g).l_p; }
  ad::Var<double> l_i(ad::Graph<double>& g) { return episode_terms(g).l_i; }

  ad::Var<double> l_d(ad::Graph<double>& g) {
    ad::Var<double> z = g.param(z_in);
    ad::Var<double> zi =
        ad::intervene(z, std::span<const int>(plan.query_dims), std::span<const int>(plan.query_donor_permutation));
    return disc_loss(models.disc.logits(g, z), models.disc.logits(g, zi));
  }

  ModelDims dims;
  Models<double> models;
  ProtoOptions opt;
  Tensor<double> x;
  Tensor<double> eps;
  Tensor<double> kl_fixed;
  ad::Parameter<double> x_in;
  ad::Parameter<double> z_in;
  InterventionPlan plan;
};

struct NamedCheck {
  std::string term;
  GradCheckResult result;
};

// Every loss term against every parameter group it touches plus its input leaf.
inline std::vector<NamedCheck> check_all_terms(std::uint64_t seed = 3) {
  std::vector<NamedCheck> out;
  auto run = [&](const std::string& name, ProtoOptions opt, auto term, auto targets) {
    TinySetup s(seed, opt);
    auto params = targets(s);
    out.push_back({name, grad_check([&](ad::Graph<double>& g) { return term(s, g); }, params)});
  };
  const ProtoOptions plain{};
  run("neg_elbo", plain, [](TinySetup& s, ad::Graph<double>& g) { return s.neg_elbo(g); },
      [](TinySetup& s) {
        auto p = TinySetup::groups(s.models.encoder.params(), s.models.decoder.params());
        p.push_back(&s.x_in);
        return p;
      });
  run("l_e", plain, [](TinySetup& s, ad::Graph<double>& g) { return s.l_e(g); },
      [](TinySetup& s) {
        auto p = TinySetup::groups(s.models.encoder.params(), s.models.disc.params());
        p.push_back(&s.x_in);
        return p;
      });
  auto episode_params = [](TinySetup& s) {
    auto p = TinySetup::groups(s.models.encoder.params(), s.models.decoder.params(), s.models.proto.params());
    p.push_back(&s.x_in);
    return p;
  };
  run("l_p", plain, [](TinySetup& s, ad::Graph<double>& g) { return s.l_p(g); }, episode_params);
  run("l_p/euclidean", ProtoOptions{Distance::kEuclidean, false},
      [](TinySetup& s, ad::Graph<double>& g) { return s.l_p(g); }, episode_params);
  run("l_p/kl_weight_gradient", ProtoOptions{Distance::kSquaredEuclidean, true},
      [](TinySetup& s, ad::Graph<double>& g) { return s.l_p(g); }, episode_params);
  run("l_i", plain, [](TinySetup& s, ad::Graph<double>& g) { return s.l_i(g); }, episode_params);
  run("l_d", plain, [](TinySetup& s, ad::Graph<double>& g) { return s.l_d(g); },
      [](TinySetup& s) {
        auto p = TinySetup::groups(s.models.disc.params());
        p.push_back(&s.z_in);
        return p;
      });
  return out;
}

}  // namespace protovae::testing
