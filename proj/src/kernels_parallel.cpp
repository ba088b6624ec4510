#include "protovae/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cstddef>
#include <omp.h>
#include <vector>

namespace protovae::kernels {

int max_threads() { return omp_get_max_threads(); }

namespace parallel {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

// Upper bound on im2col buffer entries; larger batches are processed in chunks.
constexpr std::size_t kMaxColumnEntries = std::size_t{1} << 16;
constexpr std::size_t kMinColumns = 512;

int chunk_images(const ConvGeometry& g) {
  const std::size_t per_image =
      static_cast<std::size_t>(g.in_channels) * g.kernel * g.kernel * g.out_h() * g.out_w();
  const std::size_t positions = static_cast<std::size_t>(g.out_h()) * g.out_w();
  // Small feature maps need several images per GEMM to keep it efficient.
  const std::size_t by_width = (kMinColumns + positions - 1) / std::max<std::size_t>(positions, 1);
  const std::size_t by_size = kMaxColumnEntries / std::max<std::size_t>(per_image, 1);
  return static_cast<int>(std::clamp<std::size_t>(std::max(by_width, by_size), 1, static_cast<std::size_t>(g.batch)));
}

// Output columns q whose input column q*stride - pad + kw lies inside [0, in_w).
struct ValidRange {
  int lo;
  int hi;
};

inline ValidRange valid_columns(int out_w, int in_w, int stride, int pad, int kw) {
  const int first = pad - kw;  // smallest q must satisfy q*stride >= first
  int lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  int hi = (in_w - 1 + pad - kw) < 0 ? 0 : (in_w - 1 + pad - kw) / stride + 1;
  lo = std::min(lo, out_w);
  hi = std::clamp(hi, lo, out_w);
  return {lo, hi};
}

// cols has (in_channels*k*k) rows and (count*out_h*out_w) columns; column block
// j covers image first+j.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, int first, int count, T* cols) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int k = g.kernel;
  const int s = g.stride;
  const std::size_t positions = static_cast<std::size_t>(oh) * ow;
  const std::size_t width = positions * count;
  const std::size_t image_size = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
  for (int j = 0; j < count; ++j) {
    const T* img = x + (first + j) * image_size;
    for (int c = 0; c < g.in_channels; ++c) {
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          T* dst = cols + (static_cast<std::size_t>(c * k + kh) * k + kw) * width + j * positions;
          const auto [lo, hi] = valid_columns(ow, g.in_w, s, g.pad, kw);
          for (int r = 0; r < oh; ++r) {
            T* out = dst + r * ow;
            const int ih = r * s - g.pad + kh;
            if (ih < 0 || ih >= g.in_h) {
              std::fill(out, out + ow, T(0));
              continue;
            }
            const T* src = img + (static_cast<std::size_t>(c) * g.in_h + ih) * g.in_w + kw - g.pad;
            std::fill(out, out + lo, T(0));
            for (int q = lo; q < hi; ++q) out[q] = src[q * s];
            std::fill(out + hi, out + ow, T(0));
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* cols, int first, int count, T* dx) {
  const int oh = g.out_h();
  const int ow = g.out_w();
  const int k = g.kernel;
  const int s = g.stride;
  const std::size_t positions = static_cast<std::size_t>(oh) * ow;
  const std::size_t width = positions * count;
  const std::size_t image_size = static_cast<std::size_t>(g.in_channels) * g.in_h * g.in_w;
#pragma omp parallel for schedule(static)
  for (int j = 0; j < count; ++j) {
    T* img = dx + (first + j) * image_size;
    for (int c = 0; c < g.in_channels; ++c) {
      for (int kh = 0; kh < k; ++kh) {
        for (int kw = 0; kw < k; ++kw) {
          const T* src = cols + (static_cast<std::size_t>(c * k + kh) * k + kw) * width + j * positions;
          const auto [lo, hi] = valid_columns(ow, g.in_w, s, g.pad, kw);
          for (int r = 0; r < oh; ++r) {
            const int ih = r * s - g.pad + kh;
            if (ih < 0 || ih >= g.in_h) continue;
            T* dst = img + (static_cast<std::size_t>(c) * g.in_h + ih) * g.in_w + kw - g.pad;
            const T* in = src + r * ow;
            for (int q = lo; q < hi; ++q) dst[q * s] += in[q];
          }
        }
      }
    }
  }
}

// Gather dy (count images of NCHW) into an (out_channels, count*positions) matrix.
template <typename T>
void gather_output_rows(const ConvGeometry& g, const T* dy, int first, int count, T* mat) {
  const std::size_t positions = static_cast<std::size_t>(g.out_h()) * g.out_w();
  const std::size_t width = positions * count;
#pragma omp parallel for schedule(static)
  for (int j = 0; j < count; ++j) {
    for (int o = 0; o < g.out_channels; ++o) {
      const T* src = dy + ((static_cast<std::size_t>(first + j)) * g.out_channels + o) * positions;
      std::copy(src, src + positions, mat + o * width + j * positions);
    }
  }
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, std::span<const T> x, std::span<const T> w,
                    std::span<const T> bias, std::span<T> y) {
  const int ckk = g.in_channels * g.kernel * g.kernel;
  const std::size_t positions = static_cast<std::size_t>(g.out_h()) * g.out_w();
  const int chunk = chunk_images(g);
  std::vector<T> cols(static_cast<std::size_t>(ckk) * positions * chunk);
  std::vector<T> out(static_cast<std::size_t>(g.out_channels) * positions * chunk);
  ConstMapMat<T> wm(w.data(), g.out_channels, ckk);
  for (int first = 0; first < g.batch; first += chunk) {
    const int count = std::min(chunk, g.batch - first);
    const auto width = static_cast<Eigen::Index>(positions * count);
    im2col(g, x.data(), first, count, cols.data());
    MapMat<T> om(out.data(), g.out_channels, width);
    om.noalias() = wm * ConstMapMat<T>(cols.data(), ckk, width);
#pragma omp parallel for schedule(static)
    for (int j = 0; j < count; ++j) {
      for (int o = 0; o < g.out_channels; ++o) {
        const T b = bias.empty() ? T(0) : bias[o];
        const T* src = out.data() + o * width + j * positions;
        T* dst = y.data() + (static_cast<std::size_t>(first + j) * g.out_channels + o) * positions;
        for (std::size_t p = 0; p < positions; ++p) dst[p] = src[p] + b;
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, std::span<const T> dy, std::span<const T> w,
                           std::span<T> dx) {
  const int ckk = g.in_channels * g.kernel * g.kernel;
  const std::size_t positions = static_cast<std::size_t>(g.out_h()) * g.out_w();
  const int chunk = chunk_images(g);
  std::vector<T> cols(static_cast<std::size_t>(ckk) * positions * chunk);
  std::vector<T> grad(static_cast<std::size_t>(g.out_channels) * positions * chunk);
  ConstMapMat<T> wm(w.data(), g.out_channels, ckk);
  for (int first = 0; first < g.batch; first += chunk) {
    const int count = std::min(chunk, g.batch - first);
    const auto width = static_cast<Eigen::Index>(positions * count);
    gather_output_rows(g, dy.data(), first, count, grad.data());
    MapMat<T> cm(cols.data(), ckk, width);
    cm.noalias() = wm.transpose() * ConstMapMat<T>(grad.data(), g.out_channels, width);
    col2im_add(g, cols.data(), first, count, dx.data());
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, std::span<const T> x, std::span<const T> dy,
                            std::span<T> dw) {
  const int ckk = g.in_channels * g.kernel * g.kernel;
  const std::size_t positions = static_cast<std::size_t>(g.out_h()) * g.out_w();
  const int chunk = chunk_images(g);
  std::vector<T> cols(static_cast<std::size_t>(ckk) * positions * chunk);
  std::vector<T> grad(static_cast<std::size_t>(g.out_channels) * positions * chunk);
  MapMat<T> dwm(dw.data(), g.out_channels, ckk);
  for (int first = 0; first < g.batch; first += chunk) {
    const int count = std::min(chunk, g.batch - first);
    const auto width = static_cast<Eigen::Index>(positions * count);
    im2col(g, x.data(), first, count, cols.data());
    gather_output_rows(g, dy.data(), first, count, grad.data());
    dwm.noalias() += ConstMapMat<T>(grad.data(), g.out_channels, width) *
                     ConstMapMat<T>(cols.data(), ckk, width).transpose();
  }
}

template <typename T>
void dense_forward(int rows, int in, int out, std::span<const T> x, std::span<const T> w,
                   std::span<const T> bias, std::span<T> y) {
  MapMat<T> ym(y.data(), rows, out);
  ym.noalias() = ConstMapMat<T>(x.data(), rows, in) * ConstMapMat<T>(w.data(), out, in).transpose();
  if (!bias.empty()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data(), out);
    ym.rowwise() += b;
  }
}

template <typename T>
void dense_backward(int rows, int in, int out, std::span<const T> x, std::span<const T> w,
                    std::span<const T> dy, std::span<T> dx, std::span<T> dw) {
  ConstMapMat<T> dym(dy.data(), rows, out);
  if (!dx.empty()) {
    MapMat<T>(dx.data(), rows, in).noalias() += dym * ConstMapMat<T>(w.data(), out, in);
  }
  if (!dw.empty()) {
    MapMat<T>(dw.data(), out, in).noalias() += dym.transpose() * ConstMapMat<T>(x.data(), rows, in);
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

}  // namespace parallel
}  // namespace protovae::kernels
