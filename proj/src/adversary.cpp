#include "protovae/adversary.hpp"

#include <stdexcept>
#include <string>

namespace protovae {

template <typename T>
Discriminator<T>::Discriminator(const ModelDims& dims, nn::InitRng& rng) : dims_(dims) {
  dims_.validate();
  int in = dims_.latent_dim;
  for (int i = 0; i < dims_.disc_layers; ++i) {
    nn::add_dense(params_, "disc.fc" + std::to_string(i), in, dims_.disc_width, rng);
    in = dims_.disc_width;
  }
  // Zero output layer: an untrained discriminator scores every code 0.5.
  nn::add_dense(params_, "disc.out", in, 1, rng, true);
}

template <typename T>
ad::Var<T> Discriminator<T>::run(nn::Binder<T>& bind, ad::Var<T> codes) const {
  if (codes.value().rank() != 2 || codes.dim(1) != dims_.latent_dim) {
    throw std::invalid_argument("discriminator: codes " + shape_str(codes.shape()) + " do not have width " +
                                std::to_string(dims_.latent_dim));
  }
  ad::Var<T> h = codes;
  for (int i = 0; i < dims_.disc_layers; ++i) {
    h = ad::leaky_relu(bind.dense("disc.fc" + std::to_string(i), h), static_cast<T>(kLeakySlope));
  }
  return ad::reshape(bind.dense("disc.out", h), {codes.dim(0)});
}

template <typename T>
ad::Var<T> Discriminator<T>::logits(ad::Graph<T>& g, ad::Var<T> codes) {
  nn::Binder<T> bind(g, params_);
  return run(bind, codes);
}

template <typename T>
ad::Var<T> Discriminator<T>::logits_frozen(ad::Graph<T>& g, ad::Var<T> codes) const {
  nn::Binder<T> bind(g, params_);
  return run(bind, codes);
}

template <typename T>
Tensor<T> disc_score(const Discriminator<T>& disc, const Tensor<T>& codes) {
  ad::Graph<T> g;
  return ad::sigmoid(disc.logits_frozen(g, g.constant(codes))).value();
}

template <typename T>
ad::Var<T> disc_loss(ad::Var<T> real_logits, ad::Var<T> intervened_logits) {
  // -log sigmoid(l) = softplus(-l); -log(1 - sigmoid(l)) = softplus(l).
  return ad::add(ad::mean(ad::softplus(ad::scale(intervened_logits, T(-1)))), ad::mean(ad::softplus(real_logits)));
}

template <typename T>
ad::Var<T> encoder_adv_loss(ad::Var<T> real_logits) {
  const T guard = static_cast<T>(kAdvLogitGuard);
  return ad::scale(ad::mean(ad::softplus(ad::clamp(real_logits, -guard, guard))), T(-1));
}

template class Discriminator<float>;
template class Discriminator<double>;
template Tensor<float> disc_score(const Discriminator<float>&, const Tensor<float>&);
template Tensor<double> disc_score(const Discriminator<double>&, const Tensor<double>&);
template ad::Var<float> disc_loss(ad::Var<float>, ad::Var<float>);
template ad::Var<double> disc_loss(ad::Var<double>, ad::Var<double>);
template ad::Var<float> encoder_adv_loss(ad::Var<float>);
template ad::Var<double> encoder_adv_loss(ad::Var<double>);

}  // namespace protovae
