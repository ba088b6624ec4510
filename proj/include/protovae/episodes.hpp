#pragma once

// Self-supervised episodes: every latent dimension of a batch of codes is
// intervened on to build one support set per dimension, plus one query set
// intervened on a random dimension. All codes are decoded in one call.

#include <span>
#include <vector>

#include "protovae/rng.hpp"
#include "protovae/vae.hpp"

namespace protovae {

struct InterventionPlan {
  std::vector<int> donor_permutation;        // support donors
  std::vector<int> query_dims;               // intervened dimension per query
  std::vector<int> query_donor_permutation;  // independent donors for the queries
};

// Cyclic shift by one of a random shuffle: a permutation without fixed points.
std::vector<int> random_derangement(int n, Rng& rng);
InterventionPlan make_plan(int batch, int latent_dim, Rng& rng);

// z_hat[i] = z[i] except z_hat[i][k] = z[donor[i]][k].
template <typename T>
Tensor<T> intervene(const Tensor<T>& z, int k, std::span<const int> donor);

// Rows of the decoded batch: [originals (B) | supports, dimension-major (d*B) | queries (B)].
struct EpisodeLayout {
  int batch = 0;
  int latent_dim = 0;

  int rows() const { return batch * (latent_dim + 2); }
  int original(int i) const { return i; }
  int support(int k, int i) const { return batch * (k + 1) + i; }
  int query(int i) const { return batch * (latent_dim + 1) + i; }
  // Pair p < d*B is support pair (k = p / B, i = p % B); the remaining B pairs are queries.
  int num_pairs() const { return batch * (latent_dim + 1); }
  int num_support_pairs() const { return batch * latent_dim; }
};

template <typename T>
struct Episode {
  EpisodeLayout layout;
  ad::Var<T> codes;        // (rows, d): originals, supports, queries
  ad::Var<T> logits;       // (rows, C, H, W) decoder output
  ad::Var<T> pairs;        // (num_pairs, 2C, H, W): [sigmoid(original), sigmoid(intervened)]
  std::vector<int> pair_dims;       // intervened dimension of every pair
  std::vector<int> query_examples;  // source example of every query (identity)
  std::vector<int> labels;          // query labels, equal to the query dims
  ad::Var<T> isometry_targets;      // (B, d) = |z - z_hat| of the queries
};

// Decodes with trainable decoder parameters.
template <typename T>
Episode<T> build_episode(ad::Var<T> z, const InterventionPlan& plan, Decoder<T>& decoder);
// Decodes with the decoder held fixed.
template <typename T>
Episode<T> build_episode_frozen(ad::Var<T> z, const InterventionPlan& plan, const Decoder<T>& decoder);

}  // namespace protovae
