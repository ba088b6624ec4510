#pragma once

// Prototypical network over intervention pairs. A shared convolutional trunk
// feeds two linear heads: the metric embedding (width m) and the isometry
// regressor (width d).

#include <span>
#include <vector>

#include "protovae/vae.hpp"

namespace protovae {

enum class Distance { kSquaredEuclidean, kEuclidean };

struct ProtoOptions {
  Distance distance = Distance::kSquaredEuclidean;
  // When false the KL weights scale the losses without being differentiated.
  bool kl_weight_gradient = false;
};

template <typename T>
struct PairOutputs {
  ad::Var<T> embedding;  // (P, m)
  ad::Var<T> isometry;   // (P, d)
};

template <typename T>
class ProtoNet {
 public:
  ProtoNet(const ModelDims& dims, nn::InitRng& rng);

  // pairs are (P, 2C, H, W).
  PairOutputs<T> forward(ad::Graph<T>& g, ad::Var<T> pairs);
  PairOutputs<T> forward_frozen(ad::Graph<T>& g, ad::Var<T> pairs) const;
  // Embeddings of (P, H, W, 2C) pairs given as plain tensors.
  Tensor<T> embed(const Tensor<T>& pairs_nhwc) const;

  const ModelDims& dims() const { return dims_; }
  ad::ParamSet<T>& params() { return params_; }
  const ad::ParamSet<T>& params() const { return params_; }

 private:
  PairOutputs<T> run(nn::Binder<T>& bind, ad::Var<T> pairs) const;

  ModelDims dims_;
  ad::ParamSet<T> params_;
};

// (d*B, m) dimension-major support embeddings -> (d, m) class means.
template <typename T>
ad::Var<T> compute_prototypes(ad::Var<T> support_embeddings, int latent_dim);

// (n, d) log p(class | query) from a softmax over negative distances.
template <typename T>
ad::Var<T> class_log_probs(ad::Var<T> queries, ad::Var<T> prototypes, Distance distance);
template <typename T>
Tensor<T> class_probs(const Tensor<T>& queries, const Tensor<T>& prototypes, Distance distance);

// Mean over queries of -log p(L_i | q_i) * kl_weights[L_i].
template <typename T>
ad::Var<T> uniqueness_loss(ad::Var<T> queries, ad::Var<T> prototypes, std::span<const int> labels,
                           ad::Var<T> kl_weights, const ProtoOptions& opt = {});

// As uniqueness_loss, but each query is scored against the d support
// embeddings built from its own source example. support_embeddings are
// (d*B, m) dimension-major; query_examples[i] is the source example of query i.
template <typename T>
ad::Var<T> consistency_loss(ad::Var<T> queries, ad::Var<T> support_embeddings, std::span<const int> query_examples,
                            std::span<const int> labels, ad::Var<T> kl_weights, const ProtoOptions& opt = {});

template <typename T>
ad::Var<T> proto_loss(ad::Var<T> uniqueness, ad::Var<T> consistency);

// Mean over pairs of the squared error summed over dimensions.
template <typename T>
ad::Var<T> isometry_loss(ad::Var<T> prediction, ad::Var<T> target);

}  // namespace protovae
