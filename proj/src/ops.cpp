#include "protovae/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "protovae/kernels.hpp"

namespace protovae::ad {
namespace {

namespace k = kernels::parallel;

template <typename T>
void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw std::invalid_argument(std::string(op) + ": " + what);
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T stable_softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x)));
}

// Elementwise op where dy/dx is a function of (x, y).
template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F f, D df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(xv[i]);
  const int xid = x.id;
  return x.graph->record(std::move(y), {x}, [xid, df](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    const Tensor<T>& yv = g.value(self);
    const Tensor<T>& xv = g.value(xid);
    Tensor<T>& gx = g.grad(xid);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * df(xv[i], yv[i]);
  });
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src, T factor = T(1)) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
}

}  // namespace

template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> b) {
  require<T>(x.value().rank() == 2 && w.value().rank() == 2, "linear", "expects rank-2 input and weight");
  const int rows = x.dim(0);
  const int in = x.dim(1);
  const int out = w.dim(0);
  require<T>(w.dim(1) == in, "linear",
             "input width " + std::to_string(in) + " does not match weight " + shape_str(w.shape()));
  require<T>(static_cast<int>(b.value().size()) == out, "linear", "bias size mismatch");
  Tensor<T> y({rows, out});
  k::dense_forward<T>(rows, in, out, x.value().data(), w.value().data(), b.value().data(), y.data());
  return x.graph->record(std::move(y), {x, w, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    if (g.requires_grad(x.id)) {
      k::dense_backward<T>(rows, in, out, g.value(x.id).data(), g.value(w.id).data(), gy.data(),
                           g.grad(x.id).data(), {});
    }
    if (g.requires_grad(w.id)) {
      k::dense_backward<T>(rows, in, out, g.value(x.id).data(), g.value(w.id).data(), gy.data(), {},
                           g.grad(w.id).data());
    }
    if (g.requires_grad(b.id)) kernels::channel_bias_grad<T>(rows, out, 1, gy.data(), g.grad(b.id).data());
  });
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  require<T>(x.value().rank() == 4 && w.value().rank() == 4, "conv2d", "expects NCHW input and OCKK weight");
  require<T>(w.dim(1) == x.dim(1), "conv2d",
             "input channels " + std::to_string(x.dim(1)) + " do not match weight " + shape_str(w.shape()));
  kernels::ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), stride, pad};
  require<T>(geo.out_h() > 0 && geo.out_w() > 0, "conv2d", "input too small for kernel");
  require<T>(static_cast<int>(b.value().size()) == geo.out_channels, "conv2d", "bias size mismatch");
  Tensor<T> y({geo.batch, geo.out_channels, geo.out_h(), geo.out_w()});
  k::conv2d_forward<T>(geo, x.value().data(), w.value().data(), b.value().data(), y.data());
  return x.graph->record(std::move(y), {x, w, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    if (g.requires_grad(x.id)) k::conv2d_backward_input<T>(geo, gy.data(), g.value(w.id).data(), g.grad(x.id).data());
    if (g.requires_grad(w.id)) k::conv2d_backward_weight<T>(geo, g.value(x.id).data(), gy.data(), g.grad(w.id).data());
    if (g.requires_grad(b.id)) {
      kernels::channel_bias_grad<T>(geo.batch, geo.out_channels, geo.out_h() * geo.out_w(), gy.data(),
                                    g.grad(b.id).data());
    }
  });
}

template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  require<T>(x.value().rank() == 4 && w.value().rank() == 4, "conv_transpose2d", "expects NCHW input");
  require<T>(w.dim(0) == x.dim(1), "conv_transpose2d",
             "input channels " + std::to_string(x.dim(1)) + " do not match weight " + shape_str(w.shape()));
  const int out_channels = w.dim(1);
  const auto geo = kernels::transposed_as_conv(x.dim(0), x.dim(1), x.dim(2), x.dim(3), out_channels, w.dim(2),
                                               stride, pad);
  require<T>(static_cast<int>(b.value().size()) == out_channels, "conv_transpose2d", "bias size mismatch");
  const int spatial = geo.in_h * geo.in_w;
  Tensor<T> y({geo.batch, out_channels, geo.in_h, geo.in_w});
  k::conv2d_backward_input<T>(geo, x.value().data(), w.value().data(), y.data());
  const auto& bv = b.value();
  for (int n = 0; n < geo.batch; ++n) {
    for (int c = 0; c < out_channels; ++c) {
      T* p = y.ptr() + (static_cast<std::size_t>(n) * out_channels + c) * spatial;
      for (int s = 0; s < spatial; ++s) p[s] += bv[c];
    }
  }
  return x.graph->record(std::move(y), {x, w, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    if (g.requires_grad(x.id)) {
      Tensor<T> tmp(g.value(x.id).shape());
      k::conv2d_forward<T>(geo, gy.data(), g.value(w.id).data(), {}, tmp.data());
      add_into(g.grad(x.id), tmp);
    }
    if (g.requires_grad(w.id)) k::conv2d_backward_weight<T>(geo, gy.data(), g.value(x.id).data(), g.grad(w.id).data());
    if (g.requires_grad(b.id)) {
      kernels::channel_bias_grad<T>(geo.batch, out_channels, spatial, gy.data(), g.grad(b.id).data());
    }
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(x, [](T v) { return v > 0 ? v : T(0); }, [](T v, T) { return v > 0 ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  return unary(x, [slope](T v) { return v > 0 ? v : slope * v; },
               [slope](T v, T) { return v > 0 ? T(1) : slope; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> softplus(Var<T> x) {
  return unary(x, [](T v) { return stable_softplus(v); }, [](T v, T) { return stable_sigmoid(v); });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> abs(Var<T> x) {
  return unary(x, [](T v) { return std::abs(v); },
               [](T v, T) { return v > 0 ? T(1) : (v < 0 ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> sqrt(Var<T> x, T eps) {
  return unary(x, [eps](T v) { return std::sqrt(v + eps); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Var<T> clamp(Var<T> x, T lo, T hi) {
  return unary(x, [lo, hi](T v) { return std::clamp(v, lo, hi); },
               [lo, hi](T v, T) { return (v >= lo && v <= hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require<T>(a.shape() == b.shape(), "add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y = a.value();
  add_into(y, b.value());
  return a.graph->record(std::move(y), {a, b}, [=](Graph<T>& g, int self) {
    if (g.requires_grad(a.id)) add_into(g.grad(a.id), g.grad(self));
    if (g.requires_grad(b.id)) add_into(g.grad(b.id), g.grad(self));
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require<T>(a.shape() == b.shape(), "sub", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y = a.value();
  add_into(y, b.value(), T(-1));
  return a.graph->record(std::move(y), {a, b}, [=](Graph<T>& g, int self) {
    if (g.requires_grad(a.id)) add_into(g.grad(a.id), g.grad(self));
    if (g.requires_grad(b.id)) add_into(g.grad(b.id), g.grad(self), T(-1));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require<T>(a.shape() == b.shape(), "mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<T> y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  return a.graph->record(std::move(y), {a, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    if (g.requires_grad(a.id)) {
      Tensor<T>& ga = g.grad(a.id);
      const Tensor<T>& bv = g.value(b.id);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += gy[i] * bv[i];
    }
    if (g.requires_grad(b.id)) {
      Tensor<T>& gb = g.grad(b.id);
      const Tensor<T>& av = g.value(a.id);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += gy[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T c) {
  return unary(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T c) {
  return unary(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& targets) {
  require<T>(logits.shape() == targets.shape(), "bce_with_logits",
             shape_str(logits.shape()) + " vs " + shape_str(targets.shape()));
  const Tensor<T>& lv = logits.value();
  Tensor<T> y(lv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = stable_softplus(lv[i]) - lv[i] * targets[i];
  const int lid = logits.id;
  return logits.graph->record(std::move(y), {logits}, [lid, targets](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    const Tensor<T>& lv = g.value(lid);
    Tensor<T>& gl = g.grad(lid);
    for (std::size_t i = 0; i < gl.size(); ++i) gl[i] += gy[i] * (stable_sigmoid(lv[i]) - targets[i]);
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return x.graph->record(Tensor<T>(Shape{}, acc), {x}, [=](Graph<T>& g, int self) {
    const T gy = g.grad(self)[0];
    for (T& v : g.grad(x.id).data()) v += gy;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const T n = static_cast<T>(x.value().size());
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  return x.graph->record(Tensor<T>(Shape{}, acc / n), {x}, [=](Graph<T>& g, int self) {
    const T gy = g.grad(self)[0] / n;
    for (T& v : g.grad(x.id).data()) v += gy;
  });
}

template <typename T>
Var<T> row_sum(Var<T> x) {
  const int rows = x.dim(0);
  const std::size_t per = x.value().row_size();
  Tensor<T> y({rows});
  for (int r = 0; r < rows; ++r) {
    T acc = 0;
    for (T v : x.value().row(r)) acc += v;
    y[r] = acc;
  }
  return x.graph->record(std::move(y), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(x.id);
    for (int r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < per; ++j) gx[r * per + j] += gy[r];
    }
  });
}

template <typename T>
Var<T> column_mean(Var<T> x) {
  require<T>(x.value().rank() == 2, "column_mean", "expects rank 2");
  const int rows = x.dim(0);
  const int cols = x.dim(1);
  Tensor<T> y({cols});
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) y[c] += x.value().at(r, c);
  }
  for (int c = 0; c < cols; ++c) y[c] /= static_cast<T>(rows);
  return x.graph->record(std::move(y), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(x.id);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) gx.at(r, c) += gy[c] / static_cast<T>(rows);
    }
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> y = x.value().reshaped(std::move(shape));
  return x.graph->record(std::move(y), {x}, [=](Graph<T>& g, int self) {
    add_into(g.grad(x.id), g.grad(self));
  });
}

namespace {

// Permutes (N, A, B, C) <-> (N, C, A, B) style layouts via explicit index maps.
template <typename T>
Var<T> permute_layout(Var<T> x, bool to_nchw) {
  require<T>(x.value().rank() == 4, to_nchw ? "nhwc_to_nchw" : "nchw_to_nhwc", "expects rank 4");
  const int n = x.dim(0);
  int h, w, c;
  if (to_nchw) {
    h = x.dim(1), w = x.dim(2), c = x.dim(3);
  } else {
    c = x.dim(1), h = x.dim(2), w = x.dim(3);
  }
  // index in NHWC and NCHW for element (b, y, x, ch)
  auto nhwc = [=](int b, int y, int xx, int ch) { return ((static_cast<std::size_t>(b) * h + y) * w + xx) * c + ch; };
  auto nchw = [=](int b, int y, int xx, int ch) { return ((static_cast<std::size_t>(b) * c + ch) * h + y) * w + xx; };
  Tensor<T> out(to_nchw ? Shape{n, c, h, w} : Shape{n, h, w, c});
  const Tensor<T>& in = x.value();
  for (int b = 0; b < n; ++b)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < c; ++ch) {
          if (to_nchw) {
            out[nchw(b, y, xx, ch)] = in[nhwc(b, y, xx, ch)];
          } else {
            out[nhwc(b, y, xx, ch)] = in[nchw(b, y, xx, ch)];
          }
        }
  return x.graph->record(std::move(out), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(x.id);
    for (int b = 0; b < n; ++b)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          for (int ch = 0; ch < c; ++ch) {
            if (to_nchw) {
              gx[nhwc(b, y, xx, ch)] += gy[nchw(b, y, xx, ch)];
            } else {
              gx[nchw(b, y, xx, ch)] += gy[nhwc(b, y, xx, ch)];
            }
          }
  });
}

}  // namespace

template <typename T>
Var<T> nhwc_to_nchw(Var<T> x) {
  return permute_layout(x, true);
}

template <typename T>
Var<T> nchw_to_nhwc(Var<T> x) {
  return permute_layout(x, false);
}

template <typename T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  require<T>(!parts.empty(), "concat_rows", "no inputs");
  Shape shape = parts.front().shape();
  Shape tail(shape.begin() + 1, shape.end());
  int rows = 0;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    require<T>(t == tail, "concat_rows", "trailing shapes differ");
    rows += p.dim(0);
  }
  shape[0] = rows;
  Tensor<T> y(shape);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::copy(p.value().storage().begin(), p.value().storage().end(), y.storage().begin() + off);
    off += p.value().size();
  }
  return parts.front().graph->record(std::move(y), parts, [parts, offsets](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (!g.requires_grad(parts[i].id)) continue;
      Tensor<T>& gp = g.grad(parts[i].id);
      for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += gy[offsets[i] + j];
    }
  });
}

template <typename T>
Var<T> slice_rows(Var<T> x, int begin, int end) {
  require<T>(0 <= begin && begin <= end && end <= x.dim(0), "slice_rows", "range out of bounds");
  Shape shape = x.shape();
  shape[0] = end - begin;
  const std::size_t per = x.value().row_size();
  Tensor<T> y(shape);
  std::copy(x.value().storage().begin() + begin * per, x.value().storage().begin() + end * per,
            y.storage().begin());
  return x.graph->record(std::move(y), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(x.id);
    for (std::size_t j = 0; j < gy.size(); ++j) gx[begin * per + j] += gy[j];
  });
}

template <typename T>
Var<T> slice_cols(Var<T> x, int begin, int end) {
  require<T>(x.value().rank() == 2, "slice_cols", "expects rank 2");
  require<T>(0 <= begin && begin <= end && end <= x.dim(1), "slice_cols", "range out of bounds");
  const int rows = x.dim(0);
  const int width = end - begin;
  Tensor<T> y({rows, width});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < width; ++c) y.at(r, c) = x.value().at(r, begin + c);
  return x.graph->record(std::move(y), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(x.id);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < width; ++c) gx.at(r, begin + c) += gy.at(r, c);
  });
}

template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const int> rows) {
  const std::size_t per = x.value().row_size();
  Shape shape = x.shape();
  shape[0] = static_cast<int>(rows.size());
  Tensor<T> y(shape);
  std::vector<int> idx(rows.begin(), rows.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    require<T>(idx[i] >= 0 && idx[i] < x.dim(0), "gather_rows", "row index out of range");
    std::copy_n(x.value().ptr() + idx[i] * per, per, y.ptr() + i * per);
  }
  return x.graph->record(std::move(y), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(x.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < per; ++j) gx[idx[i] * per + j] += gy[i * per + j];
  });
}

template <typename T>
Var<T> intervene(Var<T> z, std::span<const int> dims, std::span<const int> donors) {
  require<T>(z.value().rank() == 2, "intervene", "expects (batch, d) codes");
  const int batch = z.dim(0);
  const int d = z.dim(1);
  require<T>(static_cast<int>(dims.size()) == batch && static_cast<int>(donors.size()) == batch, "intervene",
             "plan length does not match batch");
  std::vector<int> dim_v(dims.begin(), dims.end());
  std::vector<int> donor_v(donors.begin(), donors.end());
  Tensor<T> y = z.value();
  for (int i = 0; i < batch; ++i) {
    require<T>(dim_v[i] >= 0 && dim_v[i] < d, "intervene", "dimension out of range");
    require<T>(donor_v[i] >= 0 && donor_v[i] < batch, "intervene", "donor out of range");
    y.at(i, dim_v[i]) = z.value().at(donor_v[i], dim_v[i]);
  }
  return z.graph->record(std::move(y), {z}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gz = g.grad(z.id);
    for (int i = 0; i < batch; ++i) {
      for (int j = 0; j < d; ++j) {
        if (j == dim_v[i]) {
          gz.at(donor_v[i], j) += gy.at(i, j);
        } else {
          gz.at(i, j) += gy.at(i, j);
        }
      }
    }
  });
}

template <typename T>
Var<T> pair_channels(Var<T> images, std::span<const int> first, std::span<const int> second) {
  require<T>(images.value().rank() == 4, "pair_channels", "expects NCHW images");
  require<T>(first.size() == second.size(), "pair_channels", "index lists differ in length");
  const int n = images.dim(0);
  const int c = images.dim(1);
  const std::size_t per = images.value().row_size();
  const int pairs = static_cast<int>(first.size());
  std::vector<int> a(first.begin(), first.end());
  std::vector<int> b(second.begin(), second.end());
  Tensor<T> y({pairs, 2 * c, images.dim(2), images.dim(3)});
  for (int p = 0; p < pairs; ++p) {
    require<T>(a[p] >= 0 && a[p] < n && b[p] >= 0 && b[p] < n, "pair_channels", "image index out of range");
    std::copy_n(images.value().ptr() + a[p] * per, per, y.ptr() + (2 * p) * per);
    std::copy_n(images.value().ptr() + b[p] * per, per, y.ptr() + (2 * p + 1) * per);
  }
  return images.graph->record(std::move(y), {images}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(images.id);
    for (int p = 0; p < pairs; ++p) {
      for (std::size_t j = 0; j < per; ++j) {
        gx[a[p] * per + j] += gy[(2 * p) * per + j];
        gx[b[p] * per + j] += gy[(2 * p + 1) * per + j];
      }
    }
  });
}

template <typename T>
Var<T> group_mean(Var<T> x, int groups) {
  require<T>(x.value().rank() == 2, "group_mean", "expects rank 2");
  require<T>(groups > 0 && x.dim(0) % groups == 0 && x.dim(0) > 0, "group_mean",
             "rows not divisible into non-empty groups");
  const int n = x.dim(0) / groups;
  const int m = x.dim(1);
  Tensor<T> y({groups, m});
  for (int k = 0; k < groups; ++k) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) y.at(k, j) += x.value().at(k * n + i, j);
    for (int j = 0; j < m; ++j) y.at(k, j) /= static_cast<T>(n);
  }
  return x.graph->record(std::move(y), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(x.id);
    for (int k = 0; k < groups; ++k)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gx.at(k * n + i, j) += gy.at(k, j) / static_cast<T>(n);
  });
}

template <typename T>
Var<T> pairwise_sq_dist(Var<T> a, Var<T> b) {
  require<T>(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(1), "pairwise_sq_dist",
             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int n = a.dim(0);
  const int kk = b.dim(0);
  const int m = a.dim(1);
  Tensor<T> y({n, kk});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < kk; ++j) {
      T acc = 0;
      for (int c = 0; c < m; ++c) {
        const T diff = a.value().at(i, c) - b.value().at(j, c);
        acc += diff * diff;
      }
      y.at(i, j) = acc;
    }
  return a.graph->record(std::move(y), {a, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    const Tensor<T>& av = g.value(a.id);
    const Tensor<T>& bv = g.value(b.id);
    const bool ga = g.requires_grad(a.id);
    const bool gb = g.requires_grad(b.id);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < kk; ++j)
        for (int c = 0; c < m; ++c) {
          const T v = T(2) * gy.at(i, j) * (av.at(i, c) - bv.at(j, c));
          if (ga) g.grad(a.id).at(i, c) += v;
          if (gb) g.grad(b.id).at(j, c) -= v;
        }
  });
}

template <typename T>
Var<T> grouped_sq_dist(Var<T> a, Var<T> b) {
  require<T>(a.value().rank() == 2 && b.value().rank() == 2 && a.dim(1) == b.dim(1), "grouped_sq_dist",
             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int n = a.dim(0);
  const int m = a.dim(1);
  require<T>(n > 0 && b.dim(0) % n == 0, "grouped_sq_dist", "support rows not a multiple of queries");
  const int kk = b.dim(0) / n;
  Tensor<T> y({n, kk});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < kk; ++j) {
      T acc = 0;
      for (int c = 0; c < m; ++c) {
        const T diff = a.value().at(i, c) - b.value().at(i * kk + j, c);
        acc += diff * diff;
      }
      y.at(i, j) = acc;
    }
  return a.graph->record(std::move(y), {a, b}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    const Tensor<T>& av = g.value(a.id);
    const Tensor<T>& bv = g.value(b.id);
    const bool ga = g.requires_grad(a.id);
    const bool gb = g.requires_grad(b.id);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < kk; ++j)
        for (int c = 0; c < m; ++c) {
          const T v = T(2) * gy.at(i, j) * (av.at(i, c) - bv.at(i * kk + j, c));
          if (ga) g.grad(a.id).at(i, c) += v;
          if (gb) g.grad(b.id).at(i * kk + j, c) -= v;
        }
  });
}

template <typename T>
Var<T> log_softmax_rows(Var<T> x) {
  require<T>(x.value().rank() == 2, "log_softmax_rows", "expects rank 2");
  const int n = x.dim(0);
  const int kk = x.dim(1);
  Tensor<T> y({n, kk});
  for (int i = 0; i < n; ++i) {
    T mx = x.value().at(i, 0);
    for (int j = 1; j < kk; ++j) mx = std::max(mx, x.value().at(i, j));
    T s = 0;
    for (int j = 0; j < kk; ++j) s += std::exp(x.value().at(i, j) - mx);
    const T lse = mx + std::log(s);
    for (int j = 0; j < kk; ++j) y.at(i, j) = x.value().at(i, j) - lse;
  }
  return x.graph->record(std::move(y), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    const Tensor<T>& yv = g.value(self);
    Tensor<T>& gx = g.grad(x.id);
    for (int i = 0; i < n; ++i) {
      T total = 0;
      for (int j = 0; j < kk; ++j) total += gy.at(i, j);
      for (int j = 0; j < kk; ++j) gx.at(i, j) += gy.at(i, j) - std::exp(yv.at(i, j)) * total;
    }
  });
}

template <typename T>
Var<T> pick(Var<T> x, std::span<const int> labels) {
  require<T>(x.value().rank() == 2 && static_cast<int>(labels.size()) == x.dim(0), "pick",
             "labels do not match rows");
  const int n = x.dim(0);
  std::vector<int> lab(labels.begin(), labels.end());
  Tensor<T> y({n});
  for (int i = 0; i < n; ++i) {
    require<T>(lab[i] >= 0 && lab[i] < x.dim(1), "pick", "label out of range");
    y[i] = x.value().at(i, lab[i]);
  }
  return x.graph->record(std::move(y), {x}, [=](Graph<T>& g, int self) {
    const Tensor<T>& gy = g.grad(self);
    Tensor<T>& gx = g.grad(x.id);
    for (int i = 0; i < n; ++i) gx.at(i, lab[i]) += gy[i];
  });
}

template <typename T>
Var<T> detach(Var<T> x) {
  return x.graph->constant(x.value());
}

#define PROTOVAE_OPS(T)                                                                  \
  template Var<T> linear(Var<T>, Var<T>, Var<T>);                                        \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                              \
  template Var<T> conv_transpose2d(Var<T>, Var<T>, Var<T>, int, int);                    \
  template Var<T> relu(Var<T>);                                                          \
  template Var<T> leaky_relu(Var<T>, T);                                                 \
  template Var<T> sigmoid(Var<T>);                                                       \
  template Var<T> softplus(Var<T>);                                                      \
  template Var<T> exp(Var<T>);                                                           \
  template Var<T> abs(Var<T>);                                                           \
  template Var<T> square(Var<T>);                                                        \
  template Var<T> sqrt(Var<T>, T);                                                       \
  template Var<T> clamp(Var<T>, T, T);                                                   \
  template Var<T> add(Var<T>, Var<T>);                                                   \
  template Var<T> sub(Var<T>, Var<T>);                                                   \
  template Var<T> mul(Var<T>, Var<T>);                                                   \
  template Var<T> scale(Var<T>, T);                                                      \
  template Var<T> add_scalar(Var<T>, T);                                                 \
  template Var<T> bce_with_logits(Var<T>, const Tensor<T>&);                             \
  template Var<T> sum(Var<T>);                                                           \
  template Var<T> mean(Var<T>);                                                          \
  template Var<T> row_sum(Var<T>);                                                       \
  template Var<T> column_mean(Var<T>);                                                   \
  template Var<T> reshape(Var<T>, Shape);                                                \
  template Var<T> nhwc_to_nchw(Var<T>);                                                  \
  template Var<T> nchw_to_nhwc(Var<T>);                                                  \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                               \
  template Var<T> slice_rows(Var<T>, int, int);                                          \
  template Var<T> slice_cols(Var<T>, int, int);                                          \
  template Var<T> gather_rows(Var<T>, std::span<const int>);                             \
  template Var<T> intervene(Var<T>, std::span<const int>, std::span<const int>);         \
  template Var<T> pair_channels(Var<T>, std::span<const int>, std::span<const int>);     \
  template Var<T> group_mean(Var<T>, int);                                               \
  template Var<T> pairwise_sq_dist(Var<T>, Var<T>);                                      \
  template Var<T> grouped_sq_dist(Var<T>, Var<T>);                                       \
  template Var<T> log_softmax_rows(Var<T>);                                              \
  template Var<T> pick(Var<T>, std::span<const int>);                                    \
  template Var<T> detach(Var<T>);

PROTOVAE_OPS(float)
PROTOVAE_OPS(double)

}  // namespace protovae::ad
