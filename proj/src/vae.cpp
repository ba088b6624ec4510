#include "protovae/vae.hpp"

#include <stdexcept>
#include <string>

namespace protovae {
namespace {

constexpr int kKernel = 4;
constexpr int kStride = 2;
constexpr int kPad = 1;

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

void ModelDims::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model dims: " + msg); };
  if (latent_dim < 2) fail("latent_dim must be >= 2");
  if (metric_dim < 2) fail("metric_dim must be >= 2");
  if (channels < 1) fail("channels must be >= 1");
  if (conv_channels.empty()) fail("at least one convolution block is required");
  for (int c : conv_channels)
    if (c < 1) fail("convolution widths must be positive");
  if (!power_of_two(height) || !power_of_two(width)) fail("image height and width must be powers of two");
  const int min_side = 1 << conv_channels.size();
  if (height < min_side || width < min_side) {
    fail("images of " + std::to_string(height) + "x" + std::to_string(width) + " are too small for " +
         std::to_string(conv_channels.size()) + " stride-2 blocks");
  }
  if (dense_width < 1 || disc_width < 1 || disc_layers < 1) fail("dense widths must be positive");
}

template <typename T>
Tensor<T> to_nchw(const Tensor<T>& nhwc) {
  ad::Graph<T> g;
  return ad::nhwc_to_nchw(g.constant(nhwc)).value();
}

template <typename T>
Tensor<T> to_nhwc(const Tensor<T>& nchw) {
  ad::Graph<T> g;
  return ad::nchw_to_nhwc(g.constant(nchw)).value();
}

template <typename T>
Encoder<T>::Encoder(const ModelDims& dims, nn::InitRng& rng) : dims_(dims) {
  dims_.validate();
  int in = dims_.channels;
  for (std::size_t i = 0; i < dims_.conv_channels.size(); ++i) {
    nn::add_conv(params_, "enc.conv" + std::to_string(i), in, dims_.conv_channels[i], kKernel, rng);
    in = dims_.conv_channels[i];
  }
  nn::add_dense(params_, "enc.fc", dims_.feature_size(), dims_.dense_width, rng);
  nn::add_dense(params_, "enc.out", dims_.dense_width, 2 * dims_.latent_dim, rng);
}

template <typename T>
PosteriorVars<T> Encoder<T>::run(nn::Binder<T>& bind, ad::Var<T> x) const {
  const Shape expected = dims_.image_shape(x.dim(0));
  if (x.shape() != expected) {
    throw std::invalid_argument("encode: input " + shape_str(x.shape()) + " does not match " + shape_str(expected));
  }
  ad::Var<T> h = ad::nhwc_to_nchw(x);
  for (std::size_t i = 0; i < dims_.conv_channels.size(); ++i) {
    h = ad::relu(bind.conv("enc.conv" + std::to_string(i), h, kStride, kPad));
  }
  h = ad::reshape(h, {x.dim(0), dims_.feature_size()});
  h = ad::relu(bind.dense("enc.fc", h));
  ad::Var<T> out = bind.dense("enc.out", h);
  const int d = dims_.latent_dim;
  return {ad::slice_cols(out, 0, d),
          ad::clamp(ad::slice_cols(out, d, 2 * d), static_cast<T>(kLogVarMin), static_cast<T>(kLogVarMax))};
}

template <typename T>
PosteriorVars<T> Encoder<T>::forward(ad::Graph<T>& g, ad::Var<T> x) {
  nn::Binder<T> bind(g, params_);
  return run(bind, x);
}

template <typename T>
PosteriorVars<T> Encoder<T>::forward_frozen(ad::Graph<T>& g, ad::Var<T> x) const {
  nn::Binder<T> bind(g, params_);
  return run(bind, x);
}

template <typename T>
PosteriorParams<T> Encoder<T>::encode(const Tensor<T>& x) const {
  ad::Graph<T> g;
  auto post = forward_frozen(g, g.constant(x));
  return {post.mu.value(), post.log_var.value()};
}

template <typename T>
Decoder<T>::Decoder(const ModelDims& dims, nn::InitRng& rng) : dims_(dims) {
  dims_.validate();
  nn::add_dense(params_, "dec.fc", dims_.latent_dim, dims_.dense_width, rng);
  nn::add_dense(params_, "dec.fc_up", dims_.dense_width, dims_.feature_size(), rng);
  const auto& ch = dims_.conv_channels;
  for (std::size_t i = ch.size(); i-- > 0;) {
    const int out = i == 0 ? dims_.channels : ch[i - 1];
    nn::add_conv_transpose(params_, "dec.convt" + std::to_string(ch.size() - 1 - i), ch[i], out, kKernel, kStride,
                           rng);
  }
}

template <typename T>
ad::Var<T> Decoder<T>::run(nn::Binder<T>& bind, ad::Var<T> z) const {
  if (z.value().rank() != 2 || z.dim(1) != dims_.latent_dim) {
    throw std::invalid_argument("decode: code shape " + shape_str(z.shape()) + " does not have width " +
                                std::to_string(dims_.latent_dim));
  }
  const int batch = z.dim(0);
  ad::Var<T> h = ad::relu(bind.dense("dec.fc", z));
  h = ad::relu(bind.dense("dec.fc_up", h));
  h = ad::reshape(h, {batch, dims_.conv_channels.back(), dims_.feature_h(), dims_.feature_w()});
  const std::size_t blocks = dims_.conv_channels.size();
  for (std::size_t i = 0; i < blocks; ++i) {
    h = bind.conv_transpose("dec.convt" + std::to_string(i), h, kStride, kPad);
    if (i + 1 < blocks) h = ad::relu(h);
  }
  return h;
}

template <typename T>
ad::Var<T> Decoder<T>::forward_nchw(ad::Graph<T>& g, ad::Var<T> z) {
  nn::Binder<T> bind(g, params_);
  return run(bind, z);
}

template <typename T>
ad::Var<T> Decoder<T>::forward_nchw_frozen(ad::Graph<T>& g, ad::Var<T> z) const {
  nn::Binder<T> bind(g, params_);
  return run(bind, z);
}

template <typename T>
Tensor<T> Decoder<T>::decode(const Tensor<T>& z) const {
  ad::Graph<T> g;
  return ad::nchw_to_nhwc(forward_nchw_frozen(g, g.constant(z))).value();
}

template <typename T>
ad::Var<T> reparameterize(const PosteriorVars<T>& post, const Tensor<T>& eps) {
  if (eps.shape() != post.mu.shape()) {
    throw std::invalid_argument("reparameterize: eps shape " + shape_str(eps.shape()) + " vs " +
                                shape_str(post.mu.shape()));
  }
  auto& g = *post.mu.graph;
  ad::Var<T> sigma = ad::exp(ad::scale(post.log_var, T(0.5)));
  return ad::add(post.mu, ad::mul(sigma, g.constant(eps)));
}

template <typename T>
Tensor<T> reparameterize(const PosteriorParams<T>& post, const Tensor<T>& eps) {
  ad::Graph<T> g;
  return reparameterize(PosteriorVars<T>{g.constant(post.mu), g.constant(post.log_var)}, eps).value();
}

template <typename T>
ad::Var<T> kl_per_dim(const PosteriorVars<T>& post) {
  ad::Var<T> terms = ad::sub(ad::add(ad::square(post.mu), ad::exp(post.log_var)), post.log_var);
  return ad::column_mean(ad::scale(ad::add_scalar(terms, T(-1)), T(0.5)));
}

template <typename T>
Tensor<T> kl_per_dim(const PosteriorParams<T>& post) {
  ad::Graph<T> g;
  return kl_per_dim(PosteriorVars<T>{g.constant(post.mu), g.constant(post.log_var)}).value();
}

template <typename T>
ad::Var<T> reconstruction_nll(const Tensor<T>& x, ad::Var<T> logits) {
  for (T v : x.data()) {
    if (!(v >= T(0) && v <= T(1))) throw std::invalid_argument("elbo: pixel values must lie in [0, 1]");
  }
  return ad::mean(ad::row_sum(ad::bce_with_logits(logits, x)));
}

template <typename T>
ad::Var<T> elbo_loss(const Tensor<T>& x, ad::Var<T> logits, const PosteriorVars<T>& post) {
  return ad::scale(ad::add(reconstruction_nll(x, logits), ad::sum(kl_per_dim(post))), T(-1));
}

template class Encoder<float>;
template class Encoder<double>;
template class Decoder<float>;
template class Decoder<double>;

#define PROTOVAE_VAE_FNS(T)                                                              \
  template ad::Var<T> reparameterize(const PosteriorVars<T>&, const Tensor<T>&);         \
  template Tensor<T> reparameterize(const PosteriorParams<T>&, const Tensor<T>&);        \
  template ad::Var<T> kl_per_dim(const PosteriorVars<T>&);                               \
  template Tensor<T> kl_per_dim(const PosteriorParams<T>&);                              \
  template ad::Var<T> elbo_loss(const Tensor<T>&, ad::Var<T>, const PosteriorVars<T>&);\
  template ad::Var<T> reconstruction_nll(const Tensor<T>&, ad::Var<T>);                  \
  template Tensor<T> to_nchw(const Tensor<T>&);                                          \
  template Tensor<T> to_nhwc(const Tensor<T>&);

PROTOVAE_VAE_FNS(float)
PROTOVAE_VAE_FNS(double)

}  // namespace protovae
