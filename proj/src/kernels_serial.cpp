#include "protovae/kernels.hpp"

#include <cstddef>

namespace protovae::kernels {

ConvGeometry transposed_as_conv(int batch, int in_channels, int in_h, int in_w, int out_channels,
                                int kernel, int stride, int pad) {
  ConvGeometry g;
  g.batch = batch;
  g.in_channels = out_channels;
  g.in_h = (in_h - 1) * stride - 2 * pad + kernel;
  g.in_w = (in_w - 1) * stride - 2 * pad + kernel;
  g.out_channels = in_channels;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = pad;
  return g;
}

template <typename T>
void channel_bias_grad(int batch, int channels, int spatial, std::span<const T> dy, std::span<T> db) {
  for (int n = 0; n < batch; ++n) {
    for (int c = 0; c < channels; ++c) {
      const T* p = dy.data() + (static_cast<std::size_t>(n) * channels + c) * spatial;
      T acc = 0;
      for (int s = 0; s < spatial; ++s) acc += p[s];
      db[c] += acc;
    }
  }
}

namespace serial {

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int k = g.kernel;
  for (int n = 0; n < g.batch; ++n) {
    for (int o = 0; o < g.out_channels; ++o) {
      for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
          T acc = bias.empty() ? T(0) : bias[o];
          for (int ci = 0; ci < g.in_channels; ++ci) {
            for (int kh = 0; kh < k; ++kh) {
              const int ih = r * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              for (int kw = 0; kw < k; ++kw) {
                const int iw = c * g.stride - g.pad + kw;
                if (iw < 0 || iw >= g.in_w) continue;
                acc += x[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw] *
                       w[((static_cast<std::size_t>(o) * g.in_channels + ci) * k + kh) * k + kw];
              }
            }
          }
          y[((static_cast<std::size_t>(n) * g.out_channels + o) * oh + r) * ow + c] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int k = g.kernel;
  for (int n = 0; n < g.batch; ++n) {
    for (int o = 0; o < g.out_channels; ++o) {
      for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
          const T grad = dy[((static_cast<std::size_t>(n) * g.out_channels + o) * oh + r) * ow + c];
          for (int ci = 0; ci < g.in_channels; ++ci) {
            for (int kh = 0; kh < k; ++kh) {
              const int ih = r * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              for (int kw = 0; kw < k; ++kw) {
                const int iw = c * g.stride - g.pad + kw;
                if (iw < 0 || iw >= g.in_w) continue;
                dx[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw] +=
                    grad * w[((static_cast<std::size_t>(o) * g.in_channels + ci) * k + kh) * k + kw];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int k = g.kernel;
  for (int n = 0; n < g.batch; ++n) {
    for (int o = 0; o < g.out_channels; ++o) {
      for (int r = 0; r < oh; ++r) {
        for (int c = 0; c < ow; ++c) {
          const T grad = dy[((static_cast<std::size_t>(n) * g.out_channels + o) * oh + r) * ow + c];
          for (int ci = 0; ci < g.in_channels; ++ci) {
            for (int kh = 0; kh < k; ++kh) {
              const int ih = r * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.in_h) continue;
              for (int kw = 0; kw < k; ++kw) {
                const int iw = c * g.stride - g.pad + kw;
                if (iw < 0 || iw >= g.in_w) continue;
                dw[((static_cast<std::size_t>(o) * g.in_channels + ci) * k + kh) * k + kw] +=
                    grad * x[((static_cast<std::size_t>(n) * g.in_channels + ci) * g.in_h + ih) * g.in_w + iw];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void dense_forward(int rows, int in, int out, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  for (int r = 0; r < rows; ++r) {
    for (int o = 0; o < out; ++o) {
      T acc = bias.empty() ? T(0) : bias[o];
      for (int i = 0; i < in; ++i) {
        acc += x[static_cast<std::size_t>(r) * in + i] * w[static_cast<std::size_t>(o) * in + i];
      }
      y[static_cast<std::size_t>(r) * out + o] = acc;
    }
  }
}

template <typename T>
void dense_backward(int rows, int in, int out, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw) {
  for (int r = 0; r < rows; ++r) {
    for (int o = 0; o < out; ++o) {
      const T grad = dy[static_cast<std::size_t>(r) * out + o];
      for (int i = 0; i < in; ++i) {
        if (!dx.empty()) dx[static_cast<std::size_t>(r) * in + i] += grad * w[static_cast<std::size_t>(o) * in + i];
        if (!dw.empty()) dw[static_cast<std::size_t>(o) * in + i] += grad * x[static_cast<std::size_t>(r) * in + i];
      }
    }
  }
}

#define PROTOVAE_INSTANTIATE(T)                                                                        \
  template void conv2d_forward<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,          \
                                  std::span<const T>, std::span<T>);                                   \
  template void conv2d_backward_input<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,   \
                                         std::span<T>);                                                \
  template void conv2d_backward_weight<T>(const ConvGeometry&, std::span<const T>, std::span<const T>,  \
                                          std::span<T>);                                               \
  template void dense_forward<T>(int, int, int, std::span<const T>, std::span<const T>,                 \
                                 std::span<const T>, std::span<T>);                                    \
  template void dense_backward<T>(int, int, int, std::span<const T>, std::span<const T>,                \
                                  std::span<const T>, std::span<T>, std::span<T>);

PROTOVAE_INSTANTIATE(float)
PROTOVAE_INSTANTIATE(double)

}  // namespace serial

template void channel_bias_grad<float>(int, int, int, std::span<const float>, std::span<float>);
template void channel_bias_grad<double>(int, int, int, std::span<const double>, std::span<double>);

}  // namespace protovae::kernels
