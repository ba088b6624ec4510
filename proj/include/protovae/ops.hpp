#pragma once

// Differentiable operations on Graph variables. Images are NCHW inside the
// networks; nhwc_to_nchw / nchw_to_nhwc convert at the boundaries.

#include <span>
#include <vector>

#include "protovae/autodiff.hpp"

namespace protovae::ad {

// Layers. w is (out, in) for linear, (out, in, k, k) for conv2d and
// (in, out, k, k) for conv_transpose2d.
template <typename T> Var<T> linear(Var<T> x, Var<T> w, Var<T> b);
template <typename T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad);
template <typename T> Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad);

// Elementwise.
template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> leaky_relu(Var<T> x, T slope);
template <typename T> Var<T> sigmoid(Var<T> x);
template <typename T> Var<T> softplus(Var<T> x);
template <typename T> Var<T> exp(Var<T> x);
template <typename T> Var<T> abs(Var<T> x);
template <typename T> Var<T> square(Var<T> x);
template <typename T> Var<T> sqrt(Var<T> x, T eps);  // sqrt(x + eps)
// Gradient is zero outside [lo, hi].
template <typename T> Var<T> clamp(Var<T> x, T lo, T hi);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> x, T c);
template <typename T> Var<T> add_scalar(Var<T> x, T c);
// Per-element binary cross-entropy of logits against constant targets in [0, 1].
template <typename T> Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& targets);

// Reductions. Scalars have shape ().
template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
// (rows, ...) -> (rows): sum over all trailing axes.
template <typename T> Var<T> row_sum(Var<T> x);
// (rows, cols) -> (cols): mean over axis 0.
template <typename T> Var<T> column_mean(Var<T> x);

// Shape and indexing.
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
template <typename T> Var<T> nhwc_to_nchw(Var<T> x);
template <typename T> Var<T> nchw_to_nhwc(Var<T> x);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(Var<T> x, int begin, int end);
template <typename T> Var<T> slice_cols(Var<T> x, int begin, int end);
template <typename T> Var<T> gather_rows(Var<T> x, std::span<const int> rows);
// out[i] = z[i] except out[i][dims[i]] = z[donors[i]][dims[i]].
template <typename T> Var<T> intervene(Var<T> z, std::span<const int> dims, std::span<const int> donors);
// (N, C, H, W) images -> (P, 2C, H, W) pairs with channels [images[first[p]], images[second[p]]].
template <typename T>
Var<T> pair_channels(Var<T> images, std::span<const int> first, std::span<const int> second);

// Metric-space helpers.
// (groups*n, m) with group-major rows -> (groups, m) group means.
template <typename T> Var<T> group_mean(Var<T> x, int groups);
// (n, m), (k, m) -> (n, k) squared Euclidean distances.
template <typename T> Var<T> pairwise_sq_dist(Var<T> a, Var<T> b);
// (n, m), (n*k, m) -> (n, k): distance of a[i] to b[i*k + j].
template <typename T> Var<T> grouped_sq_dist(Var<T> a, Var<T> b);
template <typename T> Var<T> log_softmax_rows(Var<T> x);
// (n, k) -> (n): x[i][labels[i]].
template <typename T> Var<T> pick(Var<T> x, std::span<const int> labels);

template <typename T> Var<T> detach(Var<T> x);

}  // namespace protovae::ad
