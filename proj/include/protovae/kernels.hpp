#pragma once

// Compute kernels for the network layers. Every kernel exists twice: a serial
// reference written as direct loops (kept for testing and benchmarking) and an
// OpenMP-parallel im2col/GEMM version used by the autodiff ops.
//
// Tensors are NCHW. Convolution weights are (out_channels, in_channels, k, k).
// Backward kernels ACCUMULATE into their outputs.

#include <span>

namespace protovae::kernels {

struct ConvGeometry {
  int batch = 1;
  int in_channels = 1;
  int in_h = 1;
  int in_w = 1;
  int out_channels = 1;
  int kernel = 1;
  int stride = 1;
  int pad = 0;

  int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t in_size() const {
    return static_cast<std::size_t>(batch) * in_channels * in_h * in_w;
  }
  std::size_t out_size() const {
    return static_cast<std::size_t>(batch) * out_channels * out_h() * out_w();
  }
  std::size_t weight_size() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel;
  }
};

// Geometry of the transposed convolution mapping (batch, in, h, w) to
// (batch, out, (h-1)*stride - 2*pad + kernel, ...). Expressed as the forward
// convolution it is the adjoint of, so the transposed layer reuses the same
// kernels with roles swapped. Transposed weights are (in_channels, out_channels, k, k).
ConvGeometry transposed_as_conv(int batch, int in_channels, int in_h, int in_w, int out_channels,
                                int kernel, int stride, int pad);

// y = conv(x, w) + bias (bias may be empty). dense: y = x * w^T + bias, w is (out, in).
// dense_backward skips dx or dw when the corresponding span is empty.
namespace serial {
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw);
template <typename T>
void dense_forward(int rows, int in, int out, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y);
template <typename T>
void dense_backward(int rows, int in, int out, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw);
}  // namespace serial

namespace parallel {
template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw);
template <typename T>
void dense_forward(int rows, int in, int out, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y);
template <typename T>
void dense_backward(int rows, int in, int out, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw);
}  // namespace parallel

// Sum of dy over batch and spatial positions into db (accumulates). Shared by both paths.
template <typename T>
void channel_bias_grad(int batch, int channels, int spatial, std::span<const T> dy, std::span<T> db);

// Number of threads the parallel kernels will use.
int max_threads();

}  // namespace protovae::kernels
