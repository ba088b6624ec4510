#include "protovae/episodes.hpp"

#include <stdexcept>
#include <string>

namespace protovae {
namespace {

void check_plan(const InterventionPlan& plan, int batch, int d) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("intervention plan: " + m); };
  if (batch < 2) fail("a batch of at least 2 codes is needed to find donors");
  if (static_cast<int>(plan.donor_permutation.size()) != batch ||
      static_cast<int>(plan.query_donor_permutation.size()) != batch ||
      static_cast<int>(plan.query_dims.size()) != batch) {
    fail("plan size does not match batch of " + std::to_string(batch));
  }
  for (int i = 0; i < batch; ++i) {
    for (int donor : {plan.donor_permutation[i], plan.query_donor_permutation[i]}) {
      if (donor < 0 || donor >= batch) fail("donor index out of range");
      if (donor == i) fail("example " + std::to_string(i) + " donates to itself");
    }
    if (plan.query_dims[i] < 0 || plan.query_dims[i] >= d) fail("query dimension out of range");
  }
}

template <typename T, typename Decode>
Episode<T> assemble(ad::Var<T> z, const InterventionPlan& plan, Decode&& decode) {
  if (z.value().rank() != 2) throw std::invalid_argument("build_episode: codes must be (B, d)");
  const int batch = z.dim(0);
  const int d = z.dim(1);
  check_plan(plan, batch, d);

  Episode<T> ep;
  ep.layout = {batch, d};
  std::vector<ad::Var<T>> parts{z};
  std::vector<int> dims(batch);
  for (int k = 0; k < d; ++k) {
    std::fill(dims.begin(), dims.end(), k);
    parts.push_back(ad::intervene(z, std::span<const int>(dims), std::span<const int>(plan.donor_permutation)));
  }
  ad::Var<T> queries = ad::intervene(z, std::span<const int>(plan.query_dims),
                                     std::span<const int>(plan.query_donor_permutation));
  parts.push_back(queries);
  ep.codes = ad::concat_rows(parts);
  ep.logits = decode(ep.codes);

  std::vector<int> first;
  std::vector<int> second;
  for (int k = 0; k < d; ++k) {
    for (int i = 0; i < batch; ++i) {
      first.push_back(ep.layout.original(i));
      second.push_back(ep.layout.support(k, i));
      ep.pair_dims.push_back(k);
    }
  }
  for (int i = 0; i < batch; ++i) {
    first.push_back(ep.layout.original(i));
    second.push_back(ep.layout.query(i));
    ep.pair_dims.push_back(plan.query_dims[i]);
    ep.query_examples.push_back(i);
  }
  ep.labels = plan.query_dims;
  ep.pairs = ad::pair_channels(ad::sigmoid(ep.logits), std::span<const int>(first), std::span<const int>(second));
  ep.isometry_targets = ad::abs(ad::sub(z, queries));
  return ep;
}

}  // namespace

std::vector<int> random_derangement(int n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("a derangement needs at least 2 elements");
  const auto order = shuffled_indices(rng, n);
  std::vector<int> donor(n);
  for (int i = 0; i < n; ++i) donor[order[i]] = order[(i + 1) % n];
  return donor;
}

InterventionPlan make_plan(int batch, int latent_dim, Rng& rng) {
  InterventionPlan plan;
  plan.donor_permutation = random_derangement(batch, rng);
  plan.query_dims.resize(batch);
  for (auto& k : plan.query_dims) k = uniform_index(rng, latent_dim);
  plan.query_donor_permutation = random_derangement(batch, rng);
  return plan;
}

template <typename T>
Tensor<T> intervene(const Tensor<T>& z, int k, std::span<const int> donor) {
  if (z.rank() != 2) throw std::invalid_argument("intervene: codes must be (B, d)");
  const int batch = z.dim(0);
  if (batch < 2) throw std::invalid_argument("intervene: a batch of one has no donor");
  if (k < 0 || k >= z.dim(1)) throw std::out_of_range("intervene: dimension " + std::to_string(k) + " out of range");
  if (static_cast<int>(donor.size()) != batch) throw std::invalid_argument("intervene: donor size mismatch");
  Tensor<T> out = z;
  for (int i = 0; i < batch; ++i) {
    if (donor[i] < 0 || donor[i] >= batch) throw std::out_of_range("intervene: donor index out of range");
    out.at(i, k) = z.at(donor[i], k);
  }
  return out;
}

template <typename T>
Episode<T> build_episode(ad::Var<T> z, const InterventionPlan& plan, Decoder<T>& decoder) {
  return assemble(z, plan, [&](ad::Var<T> codes) { return decoder.forward_nchw(*z.graph, codes); });
}

template <typename T>
Episode<T> build_episode_frozen(ad::Var<T> z, const InterventionPlan& plan, const Decoder<T>& decoder) {
  return assemble(z, plan, [&](ad::Var<T> codes) { return decoder.forward_nchw_frozen(*z.graph, codes); });
}

template Tensor<float> intervene(const Tensor<float>&, int, std::span<const int>);
template Tensor<double> intervene(const Tensor<double>&, int, std::span<const int>);
template Episode<float> build_episode(ad::Var<float>, const InterventionPlan&, Decoder<float>&);
template Episode<double> build_episode(ad::Var<double>, const InterventionPlan&, Decoder<double>&);
template Episode<float> build_episode_frozen(ad::Var<float>, const InterventionPlan&, const Decoder<float>&);
template Episode<double> build_episode_frozen(ad::Var<double>, const InterventionPlan&, const Decoder<double>&);

}  // namespace protovae
