#pragma once

// Latent discriminator D_w: R^d -> logit of "this code was intervened".
// Intervened codes are class 1, codes from the encoder class 0.

#include "protovae/vae.hpp"

namespace protovae {

inline constexpr double kLeakySlope = 0.2;
// Encoder-side logits are clamped to this magnitude.
inline constexpr double kAdvLogitGuard = 20.0;

template <typename T>
class Discriminator {
 public:
  Discriminator(const ModelDims& dims, nn::InitRng& rng);

  ad::Var<T> logits(ad::Graph<T>& g, ad::Var<T> codes);
  ad::Var<T> logits_frozen(ad::Graph<T>& g, ad::Var<T> codes) const;

  const ModelDims& dims() const { return dims_; }
  ad::ParamSet<T>& params() { return params_; }
  const ad::ParamSet<T>& params() const { return params_; }

 private:
  ad::Var<T> run(nn::Binder<T>& bind, ad::Var<T> codes) const;

  ModelDims dims_;
  ad::ParamSet<T> params_;
};

// sigmoid(logits), one score per code.
template <typename T>
Tensor<T> disc_score(const Discriminator<T>& disc, const Tensor<T>& codes);

// -[mean log D(z_hat) + mean log(1 - D(z))], from logits.
template <typename T>
ad::Var<T> disc_loss(ad::Var<T> real_logits, ad::Var<T> intervened_logits);

// mean log(1 - D(z)) with the logits clamped to +-kAdvLogitGuard.
template <typename T>
ad::Var<T> encoder_adv_loss(ad::Var<T> real_logits);

}  // namespace protovae
