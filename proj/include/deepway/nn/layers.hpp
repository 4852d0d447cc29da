#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iostream>
#include <limits>
#include <utility>
#include <vector>

#include "deepway/nn/tensor.hpp"

namespace deepway::nn {

// ---- convolution geometry --------------------------------------------------

// "same" padding: stride 1 keeps the size, stride 2 yields ceil(size / 2).
// Extra padding for even totals goes to the bottom/right.
struct ConvGeometry {
  int channels, height, width;  // input
  int kernel, stride;
  int out_height, out_width;
  int pad_top, pad_left;

  static ConvGeometry same(int channels, int height, int width, int kernel, int stride) {
    ConvGeometry g{channels, height, width, kernel, stride, 0, 0, 0, 0};
    g.out_height = (height + stride - 1) / stride;
    g.out_width = (width + stride - 1) / stride;
    g.pad_top = std::max((g.out_height - 1) * stride + kernel - height, 0) / 2;
    g.pad_left = std::max((g.out_width - 1) * stride + kernel - width, 0) / 2;
    return g;
  }

  int patch() const { return channels * kernel * kernel; }
};

namespace detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Column-buffer rows per chunk of output rows; keeps the buffer cache sized.
inline int chunk_rows(const ConvGeometry& g) {
  const long budget = 1 << 16;  // elements
  const long per_row = static_cast<long>(g.patch()) * g.out_width;
  return static_cast<int>(std::clamp<long>(budget / std::max(per_row, 1L), 1, g.out_height));
}

// Output columns [lo, hi) whose input column ox*stride + kx - pad_left is in range.
inline std::pair<int, int> valid_columns(const ConvGeometry& g, int kx) {
  const int off = kx - g.pad_left;
  int lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  int hi = g.width - off <= 0 ? 0 : (g.width - off + g.stride - 1) / g.stride;
  hi = std::min(hi, g.out_width);
  lo = std::min(lo, hi);
  return {lo, hi};
}

// Unfolds the receptive fields of output rows [oy0, oy1) into col, laid out
// (patch) x (rows * out_width).
template <typename T>
void im2col(const T* x, const ConvGeometry& g, int oy0, int oy1, T* col) {
  const int ncols = (oy1 - oy0) * g.out_width;
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* dst = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride + ky - g.pad_top;
          T* row = dst + static_cast<std::size_t>(oy - oy0) * g.out_width;
          if (iy < 0 || iy >= g.height) {
            std::fill(row, row + g.out_width, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * g.height + iy) * g.width + (kx - g.pad_left);
          const auto [lo, hi] = valid_columns(g, kx);
          std::fill(row, row + lo, T(0));
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, row + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) row[ox] = src[ox * g.stride];
          }
          std::fill(row + hi, row + g.out_width, T(0));
        }
      }
}

// Adjoint of im2col: scatters col back and accumulates into x.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, int oy0, int oy1, T* x) {
  const int ncols = (oy1 - oy0) * g.out_width;
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* srcbase = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ncols;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride + ky - g.pad_top;
          if (iy < 0 || iy >= g.height) continue;
          const T* row = srcbase + static_cast<std::size_t>(oy - oy0) * g.out_width;
          T* dst = x + (static_cast<std::size_t>(c) * g.height + iy) * g.width + (kx - g.pad_left);
          const auto [lo, hi] = valid_columns(g, kx);
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += row[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += row[ox];
          }
        }
      }
}

}  // namespace detail

// ---- conv2d ------------------------------------------------------------------

// x: (B, Cin, H, W); weights: (Cout, Cin, K, K); bias: (Cout) or empty.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias, int stride) {
  require_rank(x, 4, "conv2d input");
  require_rank(weights, 4, "conv2d weights");
  const int cout = static_cast<int>(weights.dim(0));
  const int k = static_cast<int>(weights.dim(2));
  if (weights.dim(1) != x.dim(1) || weights.dim(3) != weights.dim(2))
    throw shape_error("conv2d: weights " + shape_string(weights.shape()) + " do not match input " + shape_string(x.shape()));
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(cout)) throw shape_error("conv2d: bias size mismatch");
  if (stride != 1 && stride != 2) throw shape_error("conv2d: stride must be 1 or 2");

  const auto g = ConvGeometry::same(static_cast<int>(x.dim(1)), static_cast<int>(x.dim(2)), static_cast<int>(x.dim(3)), k, stride);
  const std::size_t batch = x.dim(0);
  Tensor<T> y({batch, static_cast<std::size_t>(cout), static_cast<std::size_t>(g.out_height), static_cast<std::size_t>(g.out_width)});
  const int rows = detail::chunk_rows(g);
  std::vector<T> col(static_cast<std::size_t>(g.patch()) * rows * g.out_width);
  detail::ConstMatMap<T> w(weights.data(), cout, g.patch());
  const int plane = g.out_height * g.out_width;

  for (std::size_t n = 0; n < batch; ++n) {
    const T* xin = x.item(n);
    T* yout = y.item(n);
    for (int oy0 = 0; oy0 < g.out_height; oy0 += rows) {
      const int oy1 = std::min(g.out_height, oy0 + rows);
      const int ncols = (oy1 - oy0) * g.out_width;
      detail::im2col(xin, g, oy0, oy1, col.data());
      detail::ConstMatMap<T> cm(col.data(), g.patch(), ncols);
      Eigen::Map<detail::RowMatrix<T>, 0, Eigen::OuterStride<>> ym(yout + oy0 * g.out_width, cout, ncols,
                                                                    Eigen::OuterStride<>(plane));
      ym.noalias() = w * cm;
    }
    if (!bias.empty())
      for (int c = 0; c < cout; ++c) {
        T* p = yout + static_cast<std::size_t>(c) * plane;
        const T b = bias[c];
        for (int i = 0; i < plane; ++i) p[i] += b;
      }
  }
  return y;
}

// Accumulates parameter gradients into dweights / dbias (dbias may be null);
// writes the input gradient into dx when dx is not null.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& weights, int stride, const Tensor<T>& dy, Tensor<T>* dx,
                     Tensor<T>& dweights, Tensor<T>* dbias) {
  const int cout = static_cast<int>(weights.dim(0));
  const int k = static_cast<int>(weights.dim(2));
  const auto g = ConvGeometry::same(static_cast<int>(x.dim(1)), static_cast<int>(x.dim(2)), static_cast<int>(x.dim(3)), k, stride);
  require_shape(dy, {x.dim(0), static_cast<std::size_t>(cout), static_cast<std::size_t>(g.out_height), static_cast<std::size_t>(g.out_width)}, "conv2d_backward dy");
  if (dx) *dx = Tensor<T>(x.shape());

  const int rows = detail::chunk_rows(g);
  std::vector<T> col(static_cast<std::size_t>(g.patch()) * rows * g.out_width);
  std::vector<T> dcol(col.size());
  detail::ConstMatMap<T> w(weights.data(), cout, g.patch());
  detail::MatMap<T> dw(dweights.data(), cout, g.patch());
  const int plane = g.out_height * g.out_width;

  for (std::size_t n = 0; n < x.dim(0); ++n) {
    const T* dyn = dy.item(n);
    for (int oy0 = 0; oy0 < g.out_height; oy0 += rows) {
      const int oy1 = std::min(g.out_height, oy0 + rows);
      const int ncols = (oy1 - oy0) * g.out_width;
      detail::im2col(x.item(n), g, oy0, oy1, col.data());
      detail::ConstMatMap<T> cm(col.data(), g.patch(), ncols);
      Eigen::Map<const detail::RowMatrix<T>, 0, Eigen::OuterStride<>> dym(dyn + oy0 * g.out_width, cout, ncols,
                                                                          Eigen::OuterStride<>(plane));
      dw.noalias() += dym * cm.transpose();
      if (dx) {
        detail::MatMap<T> dcm(dcol.data(), g.patch(), ncols);
        dcm.noalias() = w.transpose() * dym;
        detail::col2im(dcol.data(), g, oy0, oy1, dx->item(n));
      }
    }
    if (dbias)
      for (int c = 0; c < cout; ++c) {
        const T* p = dyn + static_cast<std::size_t>(c) * plane;
        T s = 0;
        for (int i = 0; i < plane; ++i) s += p[i];
        (*dbias)[c] += s;
      }
  }
}

// ---- transpose conv2d (stride 2) -------------------------------------------------

// x: (B, Cin, H, W); weights: (Cin, Cout, K, K); output (B, Cout, 2H, 2W).
// This is the adjoint of a stride-2 "same" conv2d whose weights are
// (Cout_conv = Cin, Cin_conv = Cout, K, K), so the two share one layout.
template <typename T>
Tensor<T> transpose_conv2d(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& bias) {
  require_rank(x, 4, "transpose_conv2d input");
  require_rank(weights, 4, "transpose_conv2d weights");
  if (weights.dim(0) != x.dim(1) || weights.dim(2) != weights.dim(3))
    throw shape_error("transpose_conv2d: weights " + shape_string(weights.shape()) + " do not match input " + shape_string(x.shape()));
  const int cin = static_cast<int>(x.dim(1));
  const int cout = static_cast<int>(weights.dim(1));
  const int k = static_cast<int>(weights.dim(2));
  if (!bias.empty() && bias.size() != static_cast<std::size_t>(cout)) throw shape_error("transpose_conv2d: bias size mismatch");
  const int h = static_cast<int>(x.dim(2)), wd = static_cast<int>(x.dim(3));
  const auto g = ConvGeometry::same(cout, 2 * h, 2 * wd, k, 2);

  Tensor<T> y({x.dim(0), static_cast<std::size_t>(cout), static_cast<std::size_t>(2 * h), static_cast<std::size_t>(2 * wd)});
  const int rows = detail::chunk_rows(g);
  std::vector<T> col(static_cast<std::size_t>(g.patch()) * rows * g.out_width);
  detail::ConstMatMap<T> w(weights.data(), cin, g.patch());
  const int plane = h * wd;

  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (int oy0 = 0; oy0 < h; oy0 += rows) {
      const int oy1 = std::min(h, oy0 + rows);
      const int ncols = (oy1 - oy0) * wd;
      Eigen::Map<const detail::RowMatrix<T>, 0, Eigen::OuterStride<>> xm(x.item(n) + oy0 * wd, cin, ncols,
                                                                         Eigen::OuterStride<>(plane));
      detail::MatMap<T> cm(col.data(), g.patch(), ncols);
      cm.noalias() = w.transpose() * xm;
      detail::col2im(col.data(), g, oy0, oy1, y.item(n));
    }
    if (!bias.empty()) {
      const std::size_t big = static_cast<std::size_t>(4) * plane;
      for (int c = 0; c < cout; ++c) {
        T* p = y.item(n) + c * big;
        for (std::size_t i = 0; i < big; ++i) p[i] += bias[c];
      }
    }
  }
  return y;
}

template <typename T>
void transpose_conv2d_backward(const Tensor<T>& x, const Tensor<T>& weights, const Tensor<T>& dy, Tensor<T>* dx,
                               Tensor<T>& dweights, Tensor<T>* dbias) {
  const int cin = static_cast<int>(x.dim(1));
  const int cout = static_cast<int>(weights.dim(1));
  const int k = static_cast<int>(weights.dim(2));
  const int h = static_cast<int>(x.dim(2)), wd = static_cast<int>(x.dim(3));
  require_shape(dy, {x.dim(0), static_cast<std::size_t>(cout), static_cast<std::size_t>(2 * h), static_cast<std::size_t>(2 * wd)}, "transpose_conv2d_backward dy");
  const auto g = ConvGeometry::same(cout, 2 * h, 2 * wd, k, 2);
  if (dx) *dx = Tensor<T>(x.shape());

  const int rows = detail::chunk_rows(g);
  std::vector<T> col(static_cast<std::size_t>(g.patch()) * rows * g.out_width);
  detail::ConstMatMap<T> w(weights.data(), cin, g.patch());
  detail::MatMap<T> dw(dweights.data(), cin, g.patch());
  const int plane = h * wd;

  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (int oy0 = 0; oy0 < h; oy0 += rows) {
      const int oy1 = std::min(h, oy0 + rows);
      const int ncols = (oy1 - oy0) * wd;
      detail::im2col(dy.item(n), g, oy0, oy1, col.data());
      detail::ConstMatMap<T> cm(col.data(), g.patch(), ncols);
      Eigen::Map<const detail::RowMatrix<T>, 0, Eigen::OuterStride<>> xm(x.item(n) + oy0 * wd, cin, ncols,
                                                                         Eigen::OuterStride<>(plane));
      dw.noalias() += xm * cm.transpose();
      if (dx) {
        Eigen::Map<detail::RowMatrix<T>, 0, Eigen::OuterStride<>> dxm(dx->item(n) + oy0 * wd, cin, ncols,
                                                                      Eigen::OuterStride<>(plane));
        dxm.noalias() = w * cm;
      }
    }
    if (dbias) {
      const std::size_t big = static_cast<std::size_t>(4) * plane;
      for (int c = 0; c < cout; ++c) {
        const T* p = dy.item(n) + c * big;
        T s = 0;
        for (std::size_t i = 0; i < big; ++i) s += p[i];
        (*dbias)[c] += s;
      }
    }
  }
}

// ---- elementwise -----------------------------------------------------------------

template <typename T>
T softplus(T x) {
  return std::max(x, T(0)) + std::log1p(std::exp(-std::fabs(x)));
}

template <typename T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// tanh(softplus(x)) written through n = e^x as n(n + 2) / (n(n + 2) + 2), so a
// single exponential serves both the activation and its derivative. Beyond
// x = 20 the ratio is 1 to working precision.
template <typename T>
T tanh_softplus(T x, T* logistic = nullptr) {
  if (x > T(20)) {
    if (logistic) *logistic = T(1);
    return T(1);
  }
  const T n = std::exp(x);
  const T q = n * (n + T(2));
  if (logistic) *logistic = n / (T(1) + n);
  return q / (q + T(2));
}

template <typename T>
T mish(T x) {
  return x * tanh_softplus(x);
}

template <typename T>
T mish_derivative(T x) {
  T s;
  const T t = tanh_softplus(x, &s);
  return t + x * (T(1) - t * t) * s;
}

template <typename T>
Tensor<T> mish(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = mish(x[i]);
  return y;
}

// dx = dy * mish'(x), where x is the pre-activation.
template <typename T>
Tensor<T> mish_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = dy[i] * mish_derivative(x[i]);
  return dx;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw shape_error("add: shape mismatch " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

// ---- channel attention -------------------------------------------------------------

// Shared two-layer MLP over the average- and max-pooled channel descriptors.
struct ChannelAttentionShape {
  int channels;
  int hidden;

  static ChannelAttentionShape make(int channels, int reduction = 16, std::ostream* warn = &std::cerr) {
    if (channels < reduction) {
      if (warn)
        *warn << "warning: channel attention with " << channels << " channels < reduction ratio " << reduction
              << "; using ratio 1\n";
      reduction = 1;
    }
    return {channels, std::max(1, channels / reduction)};
  }
};

template <typename T>
struct ChannelAttentionCache {
  std::vector<T> avg, max;           // (B, C)
  std::vector<std::size_t> argmax;   // (B, C) flat spatial index
  std::vector<T> hidden_avg, hidden_max;  // (B, hidden), post-ReLU
  std::vector<T> scale;              // (B, C)
};

// fc1: (hidden, C) + (hidden); fc2: (C, hidden) + (C).
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x, const Tensor<T>& fc1_w, const Tensor<T>& fc1_b, const Tensor<T>& fc2_w,
                            const Tensor<T>& fc2_b, ChannelAttentionCache<T>* cache = nullptr) {
  require_rank(x, 4, "channel_attention input");
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t hid = fc1_w.dim(0);
  require_shape(fc1_w, {hid, ch}, "channel_attention fc1 weights");
  require_shape(fc2_w, {ch, hid}, "channel_attention fc2 weights");

  ChannelAttentionCache<T> local;
  ChannelAttentionCache<T>& c = cache ? *cache : local;
  c.avg.assign(batch * ch, 0);
  c.max.assign(batch * ch, 0);
  c.argmax.assign(batch * ch, 0);
  c.hidden_avg.assign(batch * hid, 0);
  c.hidden_max.assign(batch * hid, 0);
  c.scale.assign(batch * ch, 0);

  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t k = 0; k < ch; ++k) {
      const T* p = x.item(n) + k * plane;
      T s = 0, m = p[0];
      std::size_t am = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        s += p[i];
        if (p[i] > m) {
          m = p[i];
          am = i;
        }
      }
      c.avg[n * ch + k] = s / static_cast<T>(plane);
      c.max[n * ch + k] = m;
      c.argmax[n * ch + k] = am;
    }
    for (std::size_t h = 0; h < hid; ++h) {
      T sa = fc1_b[h], sm = fc1_b[h];
      for (std::size_t k = 0; k < ch; ++k) {
        sa += fc1_w[h * ch + k] * c.avg[n * ch + k];
        sm += fc1_w[h * ch + k] * c.max[n * ch + k];
      }
      c.hidden_avg[n * hid + h] = std::max(sa, T(0));
      c.hidden_max[n * hid + h] = std::max(sm, T(0));
    }
    for (std::size_t k = 0; k < ch; ++k) {
      T z = 2 * fc2_b[k];
      for (std::size_t h = 0; h < hid; ++h)
        z += fc2_w[k * hid + h] * (c.hidden_avg[n * hid + h] + c.hidden_max[n * hid + h]);
      const T s = sigmoid(z);
      c.scale[n * ch + k] = s;
      const T* p = x.item(n) + k * plane;
      T* q = y.item(n) + k * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * s;
    }
  }
  return y;
}

template <typename T>
Tensor<T> channel_attention_backward(const Tensor<T>& x, const Tensor<T>& fc1_w, const Tensor<T>& fc2_w,
                                     const ChannelAttentionCache<T>& c, const Tensor<T>& dy, Tensor<T>& dfc1_w,
                                     Tensor<T>& dfc1_b, Tensor<T>& dfc2_w, Tensor<T>& dfc2_b) {
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  const std::size_t hid = fc1_w.dim(0);
  Tensor<T> dx(x.shape());
  std::vector<T> dz(ch), dha(hid), dhm(hid), davg(ch), dmax(ch);

  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t k = 0; k < ch; ++k) {
      const T* p = x.item(n) + k * plane;
      const T* g = dy.item(n) + k * plane;
      T* d = dx.item(n) + k * plane;
      const T s = c.scale[n * ch + k];
      T ds = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        ds += g[i] * p[i];
        d[i] = g[i] * s;
      }
      dz[k] = ds * s * (T(1) - s);
      dfc2_b[k] += 2 * dz[k];
    }
    for (std::size_t h = 0; h < hid; ++h) {
      T ga = 0, gm = 0;
      for (std::size_t k = 0; k < ch; ++k) {
        dfc2_w[k * hid + h] += dz[k] * (c.hidden_avg[n * hid + h] + c.hidden_max[n * hid + h]);
        ga += fc2_w[k * hid + h] * dz[k];
        gm += fc2_w[k * hid + h] * dz[k];
      }
      dha[h] = c.hidden_avg[n * hid + h] > 0 ? ga : T(0);
      dhm[h] = c.hidden_max[n * hid + h] > 0 ? gm : T(0);
      dfc1_b[h] += dha[h] + dhm[h];
    }
    for (std::size_t k = 0; k < ch; ++k) {
      T ga = 0, gm = 0;
      for (std::size_t h = 0; h < hid; ++h) {
        dfc1_w[h * ch + k] += dha[h] * c.avg[n * ch + k] + dhm[h] * c.max[n * ch + k];
        ga += fc1_w[h * ch + k] * dha[h];
        gm += fc1_w[h * ch + k] * dhm[h];
      }
      T* d = dx.item(n) + k * plane;
      const T share = ga / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) d[i] += share;
      d[c.argmax[n * ch + k]] += gm;
    }
  }
  return dx;
}

// ---- spatial attention ---------------------------------------------------------------

template <typename T>
struct SpatialAttentionCache {
  Tensor<T> pooled;                   // (B, 2, H, W): channel mean, channel max
  std::vector<std::size_t> argmax;    // (B, H*W) channel index of the max
  Tensor<T> scale;                    // (B, 1, H, W)
};

// weights: (1, 2, K, K), no bias.
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x, const Tensor<T>& weights, SpatialAttentionCache<T>* cache = nullptr) {
  require_rank(x, 4, "spatial_attention input");
  const std::size_t batch = x.dim(0), ch = x.dim(1), hh = x.dim(2), ww = x.dim(3), plane = hh * ww;
  if (weights.rank() != 4 || weights.dim(0) != 1 || weights.dim(1) != 2)
    throw shape_error("spatial_attention weights must be (1, 2, K, K)");

  SpatialAttentionCache<T> local;
  SpatialAttentionCache<T>& c = cache ? *cache : local;
  c.pooled = Tensor<T>({batch, 2, hh, ww});
  c.argmax.assign(batch * plane, 0);
  for (std::size_t n = 0; n < batch; ++n) {
    const T* p = x.item(n);
    T* avg = c.pooled.item(n);
    T* mx = avg + plane;
    for (std::size_t i = 0; i < plane; ++i) {
      avg[i] = 0;
      mx[i] = p[i];
    }
    for (std::size_t k = 0; k < ch; ++k) {
      const T* q = p + k * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        avg[i] += q[i];
        if (q[i] > mx[i]) {
          mx[i] = q[i];
          c.argmax[n * plane + i] = k;
        }
      }
    }
    for (std::size_t i = 0; i < plane; ++i) avg[i] /= static_cast<T>(ch);
  }
  c.scale = conv2d(c.pooled, weights, Tensor<T>(), 1);
  for (auto& v : c.scale.values()) v = sigmoid(v);

  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const T* s = c.scale.item(n);
    for (std::size_t k = 0; k < ch; ++k) {
      const T* p = x.item(n) + k * plane;
      T* q = y.item(n) + k * plane;
      for (std::size_t i = 0; i < plane; ++i) q[i] = p[i] * s[i];
    }
  }
  return y;
}

template <typename T>
Tensor<T> spatial_attention_backward(const Tensor<T>& x, const Tensor<T>& weights, const SpatialAttentionCache<T>& c,
                                     const Tensor<T>& dy, Tensor<T>& dweights) {
  const std::size_t batch = x.dim(0), ch = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<T> dx(x.shape());
  Tensor<T> dz(c.scale.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const T* s = c.scale.item(n);
    T* dzn = dz.item(n);
    for (std::size_t k = 0; k < ch; ++k) {
      const T* p = x.item(n) + k * plane;
      const T* g = dy.item(n) + k * plane;
      T* d = dx.item(n) + k * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        dzn[i] += g[i] * p[i];
        d[i] = g[i] * s[i];
      }
    }
    for (std::size_t i = 0; i < plane; ++i) dzn[i] *= s[i] * (T(1) - s[i]);
  }
  Tensor<T> dpooled;
  conv2d_backward(c.pooled, weights, 1, dz, &dpooled, dweights, static_cast<Tensor<T>*>(nullptr));
  for (std::size_t n = 0; n < batch; ++n) {
    const T* davg = dpooled.item(n);
    const T* dmx = davg + plane;
    T* d = dx.item(n);
    for (std::size_t k = 0; k < ch; ++k)
      for (std::size_t i = 0; i < plane; ++i) d[k * plane + i] += davg[i] / static_cast<T>(ch);
    for (std::size_t i = 0; i < plane; ++i) d[c.argmax[n * plane + i] * plane + i] += dmx[i];
  }
  return dx;
}

}  // namespace deepway::nn
