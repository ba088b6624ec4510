#pragma once

// Convolutional Gaussian-posterior VAE with a Bernoulli pixel likelihood.

#include <cstdint>
#include <vector>

#include "protovae/nn.hpp"
#include "protovae/tensor.hpp"

namespace protovae {

struct ModelDims {
  int height = 32;
  int width = 32;
  int channels = 1;
  int latent_dim = 10;  // d
  int metric_dim = 16;  // m
  // Stride-2, kernel-4 convolution widths shared by the encoder, the mirrored
  // decoder and the prototypical trunk.
  std::vector<int> conv_channels{32, 32, 64, 64};
  int dense_width = 128;
  int disc_width = 256;
  int disc_layers = 4;

  // Throws std::invalid_argument describing the first violated constraint.
  void validate() const;
  int feature_h() const { return height >> conv_channels.size(); }
  int feature_w() const { return width >> conv_channels.size(); }
  int feature_size() const { return conv_channels.back() * feature_h() * feature_w(); }
  Shape image_shape(int batch) const { return {batch, height, width, channels}; }
};

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

template <typename T>
struct PosteriorParams {
  Tensor<T> mu;       // (B, d)
  Tensor<T> log_var;  // (B, d), clamped
};

template <typename T>
struct PosteriorVars {
  ad::Var<T> mu;
  ad::Var<T> log_var;
};

template <typename T>
class Encoder {
 public:
  Encoder(const ModelDims& dims, nn::InitRng& rng);

  // x is (B, H, W, C).
  PosteriorVars<T> forward(ad::Graph<T>& g, ad::Var<T> x);
  PosteriorVars<T> forward_frozen(ad::Graph<T>& g, ad::Var<T> x) const;
  PosteriorParams<T> encode(const Tensor<T>& x) const;

  const ModelDims& dims() const { return dims_; }
  ad::ParamSet<T>& params() { return params_; }
  const ad::ParamSet<T>& params() const { return params_; }

 private:
  PosteriorVars<T> run(nn::Binder<T>& bind, ad::Var<T> x) const;

  ModelDims dims_;
  ad::ParamSet<T> params_;
};

template <typename T>
class Decoder {
 public:
  Decoder(const ModelDims& dims, nn::InitRng& rng);

  // Logits in NCHW, as consumed by the pair network and the likelihood.
  ad::Var<T> forward_nchw(ad::Graph<T>& g, ad::Var<T> z);
  ad::Var<T> forward_nchw_frozen(ad::Graph<T>& g, ad::Var<T> z) const;
  // Logits shaped (B, H, W, C).
  Tensor<T> decode(const Tensor<T>& z) const;

  const ModelDims& dims() const { return dims_; }
  ad::ParamSet<T>& params() { return params_; }
  const ad::ParamSet<T>& params() const { return params_; }

 private:
  ad::Var<T> run(nn::Binder<T>& bind, ad::Var<T> z) const;

  ModelDims dims_;
  ad::ParamSet<T> params_;
};

// z = mu + exp(log_var / 2) * eps.
template <typename T>
ad::Var<T> reparameterize(const PosteriorVars<T>& post, const Tensor<T>& eps);
template <typename T>
Tensor<T> reparameterize(const PosteriorParams<T>& post, const Tensor<T>& eps);

// Batch mean of 0.5 * (mu^2 + exp(log_var) - log_var - 1) per latent dimension.
template <typename T>
ad::Var<T> kl_per_dim(const PosteriorVars<T>& post);
template <typename T>
Tensor<T> kl_per_dim(const PosteriorParams<T>& post);

// Evidence lower bound, batch averaged: -sum_pixels BCE(x | logits) - sum_j KL_j.
// x and logits share a layout. Rejects pixels outside [0, 1].
template <typename T>
ad::Var<T> elbo_loss(const Tensor<T>& x, ad::Var<T> logits, const PosteriorVars<T>& post);

// Bernoulli negative log-likelihood summed over pixels, averaged over the batch.
template <typename T>
ad::Var<T> reconstruction_nll(const Tensor<T>& x, ad::Var<T> logits);

// (B, H, W, C) <-> (B, C, H, W) on plain tensors.
template <typename T>
Tensor<T> to_nchw(const Tensor<T>& nhwc);
template <typename T>
Tensor<T> to_nhwc(const Tensor<T>& nchw);

extern template class Encoder<float>;
extern template class Encoder<double>;
extern template class Decoder<float>;
extern template class Decoder<double>;

}  // namespace protovae
