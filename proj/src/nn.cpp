#include "protovae/nn.hpp"

#include <cmath>

namespace protovae::nn {
namespace {

template <typename T>
Tensor<T> he_uniform(Shape shape, double fan_in, InitRng& rng) {
  const double bound = std::sqrt(6.0 / fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return t;
}

}  // namespace

template <typename T>
void add_dense(ad::ParamSet<T>& ps, const std::string& prefix, int in, int out, InitRng& rng, bool zero_weights) {
  ps.add(prefix + ".w", zero_weights ? Tensor<T>({out, in}) : he_uniform<T>({out, in}, in, rng));
  ps.add(prefix + ".b", Tensor<T>({out}));
}

template <typename T>
void add_conv(ad::ParamSet<T>& ps, const std::string& prefix, int in, int out, int kernel, InitRng& rng) {
  ps.add(prefix + ".w", he_uniform<T>({out, in, kernel, kernel}, static_cast<double>(in) * kernel * kernel, rng));
  ps.add(prefix + ".b", Tensor<T>({out}));
}

template <typename T>
void add_conv_transpose(ad::ParamSet<T>& ps, const std::string& prefix, int in, int out, int kernel, int stride,
                        InitRng& rng) {
  // Each output pixel receives (kernel/stride)^2 taps per input channel.
  const double fan_in = static_cast<double>(in) * kernel * kernel / (stride * stride);
  ps.add(prefix + ".w", he_uniform<T>({in, out, kernel, kernel}, fan_in, rng));
  ps.add(prefix + ".b", Tensor<T>({out}));
}

template void add_dense<float>(ad::ParamSet<float>&, const std::string&, int, int, InitRng&, bool);
template void add_dense<double>(ad::ParamSet<double>&, const std::string&, int, int, InitRng&, bool);
template void add_conv<float>(ad::ParamSet<float>&, const std::string&, int, int, int, InitRng&);
template void add_conv<double>(ad::ParamSet<double>&, const std::string&, int, int, int, InitRng&);
template void add_conv_transpose<float>(ad::ParamSet<float>&, const std::string&, int, int, int, int, InitRng&);
template void add_conv_transpose<double>(ad::ParamSet<double>&, const std::string&, int, int, int, int, InitRng&);

}  // namespace protovae::nn
