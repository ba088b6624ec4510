#include "protovae/proto_metric.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace protovae {
namespace {

constexpr int kKernel = 4;
constexpr int kStride = 2;
constexpr int kPad = 1;
// Keeps the Euclidean distance differentiable at zero.
constexpr double kSqrtEps = 1e-12;

template <typename T>
ad::Var<T> to_distance(ad::Var<T> sq, Distance distance) {
  return distance == Distance::kSquaredEuclidean ? sq : ad::sqrt(sq, static_cast<T>(kSqrtEps));
}

template <typename T>
ad::Var<T> weighted_nll(ad::Var<T> log_probs, std::span<const int> labels, ad::Var<T> kl_weights,
                        const ProtoOptions& opt) {
  const int d = log_probs.dim(1);
  if (kl_weights.value().size() != static_cast<std::size_t>(d)) {
    throw std::invalid_argument("KL weights have " + std::to_string(kl_weights.value().size()) +
                                " entries for " + std::to_string(d) + " classes");
  }
  ad::Var<T> w = opt.kl_weight_gradient ? kl_weights : ad::detach(kl_weights);
  ad::Var<T> per_query_w = ad::reshape(ad::gather_rows(ad::reshape(w, {d, 1}), labels), {log_probs.dim(0)});
  return ad::scale(ad::mean(ad::mul(ad::pick(log_probs, labels), per_query_w)), T(-1));
}

}  // namespace

template <typename T>
ProtoNet<T>::ProtoNet(const ModelDims& dims, nn::InitRng& rng) : dims_(dims) {
  dims_.validate();
  int in = 2 * dims_.channels;
  for (std::size_t i = 0; i < dims_.conv_channels.size(); ++i) {
    nn::add_conv(params_, "proto.conv" + std::to_string(i), in, dims_.conv_channels[i], kKernel, rng);
    in = dims_.conv_channels[i];
  }
  nn::add_dense(params_, "proto.fc", dims_.feature_size(), dims_.dense_width, rng);
  nn::add_dense(params_, "proto.embed", dims_.dense_width, dims_.metric_dim, rng);
  nn::add_dense(params_, "proto.iso", dims_.dense_width, dims_.latent_dim, rng);
}

template <typename T>
PairOutputs<T> ProtoNet<T>::run(nn::Binder<T>& bind, ad::Var<T> pairs) const {
  const Shape expected{pairs.value().rank() == 4 ? pairs.dim(0) : 0, 2 * dims_.channels, dims_.height, dims_.width};
  if (pairs.shape() != expected) {
    throw std::invalid_argument("embed_pair: pairs " + shape_str(pairs.shape()) + " do not match " +
                                shape_str(expected));
  }
  ad::Var<T> h = pairs;
  for (std::size_t i = 0; i < dims_.conv_channels.size(); ++i) {
    h = ad::relu(bind.conv("proto.conv" + std::to_string(i), h, kStride, kPad));
  }
  h = ad::reshape(h, {pairs.dim(0), dims_.feature_size()});
  h = ad::relu(bind.dense("proto.fc", h));
  return {bind.dense("proto.embed", h), bind.dense("proto.iso", h)};
}

template <typename T>
PairOutputs<T> ProtoNet<T>::forward(ad::Graph<T>& g, ad::Var<T> pairs) {
  nn::Binder<T> bind(g, params_);
  return run(bind, pairs);
}

template <typename T>
PairOutputs<T> ProtoNet<T>::forward_frozen(ad::Graph<T>& g, ad::Var<T> pairs) const {
  nn::Binder<T> bind(g, params_);
  return run(bind, pairs);
}

template <typename T>
Tensor<T> ProtoNet<T>::embed(const Tensor<T>& pairs_nhwc) const {
  ad::Graph<T> g;
  return forward_frozen(g, ad::nhwc_to_nchw(g.constant(pairs_nhwc))).embedding.value();
}

template <typename T>
ad::Var<T> compute_prototypes(ad::Var<T> support_embeddings, int latent_dim) {
  if (latent_dim < 1 || support_embeddings.value().rank() != 2 || support_embeddings.dim(0) == 0 ||
      support_embeddings.dim(0) % latent_dim != 0) {
    throw std::invalid_argument("compute_prototypes: every one of the " + std::to_string(latent_dim) +
                                " support sets must be non-empty and equally sized");
  }
  return ad::group_mean(support_embeddings, latent_dim);
}

template <typename T>
ad::Var<T> class_log_probs(ad::Var<T> queries, ad::Var<T> prototypes, Distance distance) {
  return ad::log_softmax_rows(ad::scale(to_distance(ad::pairwise_sq_dist(queries, prototypes), distance), T(-1)));
}

template <typename T>
Tensor<T> class_probs(const Tensor<T>& queries, const Tensor<T>& prototypes, Distance distance) {
  ad::Graph<T> g;
  Tensor<T> p = class_log_probs(g.constant(queries), g.constant(prototypes), distance).value();
  for (auto& v : p.data()) v = std::exp(v);
  return p;
}

template <typename T>
ad::Var<T> uniqueness_loss(ad::Var<T> queries, ad::Var<T> prototypes, std::span<const int> labels,
                           ad::Var<T> kl_weights, const ProtoOptions& opt) {
  if (static_cast<int>(labels.size()) != queries.dim(0)) {
    throw std::invalid_argument("uniqueness_loss: one label per query is required");
  }
  return weighted_nll(class_log_probs(queries, prototypes, opt.distance), labels, kl_weights, opt);
}

template <typename T>
ad::Var<T> consistency_loss(ad::Var<T> queries, ad::Var<T> support_embeddings, std::span<const int> query_examples,
                            std::span<const int> labels, ad::Var<T> kl_weights, const ProtoOptions& opt) {
  const int n = queries.dim(0);
  const int d = static_cast<int>(kl_weights.value().size());
  const int rows = support_embeddings.dim(0);
  if (d < 1 || rows % d != 0) {
    throw std::invalid_argument("consistency_loss: support embeddings do not form " + std::to_string(d) + " sets");
  }
  const int batch = rows / d;
  if (static_cast<int>(query_examples.size()) != n || static_cast<int>(labels.size()) != n) {
    throw std::invalid_argument("consistency_loss: one source example and label per query is required");
  }
  // Re-order to example-major so row i*d + k is example i intervened at k.
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i) {
    const int e = query_examples[i];
    if (e < 0 || e >= batch) {
      throw std::invalid_argument("consistency_loss: query " + std::to_string(i) + " refers to example " +
                                  std::to_string(e) + " outside the " + std::to_string(batch) + " support examples");
    }
    for (int k = 0; k < d; ++k) order.push_back(k * batch + e);
  }
  ad::Var<T> own = ad::gather_rows(support_embeddings, std::span<const int>(order));
  ad::Var<T> logits = ad::scale(to_distance(ad::grouped_sq_dist(queries, own), opt.distance), T(-1));
  return weighted_nll(ad::log_softmax_rows(logits), labels, kl_weights, opt);
}

template <typename T>
ad::Var<T> proto_loss(ad::Var<T> uniqueness, ad::Var<T> consistency) {
  return ad::add(uniqueness, consistency);
}

template <typename T>
ad::Var<T> isometry_loss(ad::Var<T> prediction, ad::Var<T> target) {
  if (prediction.shape() != target.shape() || prediction.value().rank() != 2) {
    throw std::invalid_argument("isometry_loss: prediction " + shape_str(prediction.shape()) + " vs target " +
                                shape_str(target.shape()));
  }
  return ad::mean(ad::row_sum(ad::square(ad::sub(prediction, target))));
}

template class ProtoNet<float>;
template class ProtoNet<double>;

#define PROTOVAE_PROTO_FNS(T)                                                                                   \
  template ad::Var<T> compute_prototypes(ad::Var<T>, int);                                                     \
  template ad::Var<T> class_log_probs(ad::Var<T>, ad::Var<T>, Distance);                                       \
  template Tensor<T> class_probs(const Tensor<T>&, const Tensor<T>&, Distance);                                \
  template ad::Var<T> uniqueness_loss(ad::Var<T>, ad::Var<T>, std::span<const int>, ad::Var<T>,                \
                                      const ProtoOptions&);                                                    \
  template ad::Var<T> consistency_loss(ad::Var<T>, ad::Var<T>, std::span<const int>, std::span<const int>,     \
                                       ad::Var<T>, const ProtoOptions&);                                       \
  template ad::Var<T> proto_loss(ad::Var<T>, ad::Var<T>);                                                      \
  template ad::Var<T> isometry_loss(ad::Var<T>, ad::Var<T>);

PROTOVAE_PROTO_FNS(float)
PROTOVAE_PROTO_FNS(double)

}  // namespace protovae
