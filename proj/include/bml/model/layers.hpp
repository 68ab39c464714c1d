#pragma once

// Convolutional building blocks with explicit forward/backward passes.
// Each layer caches what it needs from its last forward; the model is owned
// by a single training stream, so one cache slot per layer is enough.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "bml/core/common.hpp"
#include "bml/core/gemm.hpp"
#include "bml/core/rng.hpp"
#include "bml/core/tensor.hpp"

namespace bml::model {

template <typename T>
using ParamFn = std::function<void(const std::string&, std::vector<T>&, std::vector<T>&)>;
template <typename T>
using BufferFn = std::function<void(const std::string&, std::vector<T>&)>;

namespace detail {

// Patch matrix: rows iterate (image, out_y, out_x), columns (ky, kx, in_ch).
// Channel runs are contiguous in both layouts, so the inner copy is a memcpy.
template <typename T>
void im2col(const Tensor4<T>& x, int k, int stride, int pad, int oh, int ow, Mat<T>& col) {
  const int patch = k * k * x.c;
  if (col.rows != x.n * oh * ow || col.cols != patch) col = Mat<T>(x.n * oh * ow, patch);
  std::fill(col.v.begin(), col.v.end(), T(0));
  std::size_t r = 0;
  for (int i = 0; i < x.n; ++i)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++r) {
        T* dst = col.row(static_cast<int>(r));
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= x.w) continue;
            std::memcpy(dst + (ky * k + kx) * x.c, &x.at(i, iy, ix, 0), sizeof(T) * x.c);
          }
        }
      }
}

// Scatter-add of the patch-matrix gradient back onto the input grid.
template <typename T>
void col2im(const Mat<T>& col, int k, int stride, int pad, int oh, int ow, Tensor4<T>& dx) {
  std::size_t r = 0;
  for (int i = 0; i < dx.n; ++i)
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox, ++r) {
        const T* src = col.row(static_cast<int>(r));
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= dx.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= dx.w) continue;
            T* d = &dx.at(i, iy, ix, 0);
            const T* s = src + (ky * k + kx) * dx.c;
            for (int ch = 0; ch < dx.c; ++ch) d[ch] += s[ch];
          }
        }
      }
}

}  // namespace detail

/// 2-D convolution without bias (always followed by a batch norm here).
/// Weights live as [k*k*in_c, out_c] so forward is one patch-matrix GEMM.
template <typename T>
struct Conv2d {
  int in_c = 0, out_c = 0, ksize = 3, stride = 1, pad = 1;
  Mat<T> w, gw;

  Mat<T> col_;  // cached patches from the last forward
  int n_ = 0, oh_ = 0, ow_ = 0, in_h_ = 0, in_w_ = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int k = 3, int stride_arg = 1, int pad_arg = 1)
      : in_c(in), out_c(out), ksize(k), stride(stride_arg), pad(pad_arg),
        w(k * k * in, out), gw(k * k * in, out) {}

  void init(Rng& rng) {
    const T stdev = std::sqrt(T(2) / T(ksize * ksize * in_c));
    for (auto& x : w.v) x = T(rng.normal()) * stdev;
  }

  int out_dim(int in) const { return (in + 2 * pad - ksize) / stride + 1; }

  Tensor4<T> forward(const Tensor4<T>& x) {
    check(x.c == in_c, "conv: channel mismatch ", x.c, " vs ", in_c);
    n_ = x.n;
    in_h_ = x.h;
    in_w_ = x.w;
    oh_ = out_dim(x.h);
    ow_ = out_dim(x.w);
    detail::im2col(x, ksize, stride, pad, oh_, ow_, col_);
    Mat<T> y;
    matmul(col_, w, y);
    Tensor4<T> out(n_, oh_, ow_, out_c);
    out.v = std::move(y.v);
    return out;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Mat<T> dym(n_ * oh_ * ow_, out_c);
    dym.v = dy.v;
    matmul_tn_acc(col_, dym, gw);
    Mat<T> dcol;
    matmul_nt(dym, w, dcol);
    Tensor4<T> dx(n_, in_h_, in_w_, in_c);
    detail::col2im(dcol, ksize, stride, pad, oh_, ow_, dx);
    return dx;
  }

  void for_each_param(const std::string& prefix, const ParamFn<T>& fn) {
    fn(prefix + ".w", w.v, gw.v);
  }
};

/// Per-channel batch normalization over (batch, y, x). Training normalizes by
/// batch statistics (population variance) and folds the unbiased variance into
/// the running estimates; evaluation uses the running estimates.
template <typename T>
struct BatchNorm2d {
  int c = 0;
  std::vector<T> gamma, beta, ggamma, gbeta;
  std::vector<T> running_mean, running_var;
  T eps = T(1e-5), momentum = T(0.1);

  Tensor4<T> xhat_;
  std::vector<T> inv_std_;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels)
      : c(channels), gamma(static_cast<std::size_t>(channels), T(1)),
        beta(static_cast<std::size_t>(channels), T(0)),
        ggamma(static_cast<std::size_t>(channels), T(0)),
        gbeta(static_cast<std::size_t>(channels), T(0)),
        running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}

  Tensor4<T> forward(const Tensor4<T>& x, bool train) {
    check(x.c == c, "batchnorm: channel mismatch");
    const std::size_t m = x.v.size() / static_cast<std::size_t>(c);
    Tensor4<T> y = Tensor4<T>::zeros_like(x);
    if (train) {
      check(m > 1, "batchnorm: needs more than one sample per channel in training");
      std::vector<T> mean(static_cast<std::size_t>(c), T(0)), var(static_cast<std::size_t>(c), T(0));
      for (std::size_t i = 0; i < x.v.size(); ++i) mean[i % c] += x.v[i];
      for (auto& v : mean) v /= T(m);
      for (std::size_t i = 0; i < x.v.size(); ++i) {
        const T d = x.v[i] - mean[i % c];
        var[i % c] += d * d;
      }
      for (auto& v : var) v /= T(m);
      inv_std_.assign(static_cast<std::size_t>(c), T(0));
      for (int ch = 0; ch < c; ++ch) inv_std_[ch] = T(1) / std::sqrt(var[ch] + eps);
      xhat_ = Tensor4<T>::zeros_like(x);
      for (std::size_t i = 0; i < x.v.size(); ++i) {
        const std::size_t ch = i % c;
        xhat_.v[i] = (x.v[i] - mean[ch]) * inv_std_[ch];
        y.v[i] = gamma[ch] * xhat_.v[i] + beta[ch];
      }
      const T unbias = m > 1 ? T(m) / T(m - 1) : T(1);
      for (int ch = 0; ch < c; ++ch) {
        running_mean[ch] = (T(1) - momentum) * running_mean[ch] + momentum * mean[ch];
        running_var[ch] = (T(1) - momentum) * running_var[ch] + momentum * var[ch] * unbias;
      }
    } else {
      for (std::size_t i = 0; i < x.v.size(); ++i) {
        const std::size_t ch = i % c;
        y.v[i] = gamma[ch] * (x.v[i] - running_mean[ch]) / std::sqrt(running_var[ch] + eps) +
                 beta[ch];
      }
    }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    check(!xhat_.v.empty(), "batchnorm backward requires a training-mode forward");
    const std::size_t m = dy.v.size() / static_cast<std::size_t>(c);
    std::vector<T> sum_dy(static_cast<std::size_t>(c), T(0)),
        sum_dy_xhat(static_cast<std::size_t>(c), T(0));
    for (std::size_t i = 0; i < dy.v.size(); ++i) {
      const std::size_t ch = i % c;
      sum_dy[ch] += dy.v[i];
      sum_dy_xhat[ch] += dy.v[i] * xhat_.v[i];
    }
    for (int ch = 0; ch < c; ++ch) {
      ggamma[ch] += sum_dy_xhat[ch];
      gbeta[ch] += sum_dy[ch];
    }
    Tensor4<T> dx = Tensor4<T>::zeros_like(dy);
    for (std::size_t i = 0; i < dy.v.size(); ++i) {
      const std::size_t ch = i % c;
      dx.v[i] = gamma[ch] * inv_std_[ch] *
                (dy.v[i] - sum_dy[ch] / T(m) - xhat_.v[i] * sum_dy_xhat[ch] / T(m));
    }
    return dx;
  }

  void for_each_param(const std::string& prefix, const ParamFn<T>& fn) {
    fn(prefix + ".gamma", gamma, ggamma);
    fn(prefix + ".beta", beta, gbeta);
  }
  void for_each_buffer(const std::string& prefix, const BufferFn<T>& fn) {
    fn(prefix + ".running_mean", running_mean);
    fn(prefix + ".running_var", running_var);
  }
};

template <typename T>
struct LeakyReLU {
  T slope = T(0.1);
  Tensor4<T> x_;

  Tensor4<T> forward(const Tensor4<T>& x) {
    x_ = x;
    Tensor4<T> y = x;
    for (auto& v : y.v)
      if (v < T(0)) v *= slope;
    return y;
  }
  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> dx = dy;
    for (std::size_t i = 0; i < dx.v.size(); ++i)
      if (x_.v[i] < T(0)) dx.v[i] *= slope;
    return dx;
  }
};

/// 2x2 max pooling, stride 2, floor semantics (odd trailing row/col dropped).
template <typename T>
struct MaxPool2 {
  std::vector<std::size_t> argmax_;
  int in_h_ = 0, in_w_ = 0, n_ = 0, c_ = 0;

  Tensor4<T> forward(const Tensor4<T>& x) {
    n_ = x.n;
    c_ = x.c;
    in_h_ = x.h;
    in_w_ = x.w;
    const int oh = x.h / 2, ow = x.w / 2;
    check(oh >= 1 && ow >= 1, "maxpool: map too small ", x.h, "x", x.w);
    Tensor4<T> y(x.n, oh, ow, x.c);
    argmax_.assign(y.v.size(), 0);
    std::size_t o = 0;
    for (int i = 0; i < x.n; ++i)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox)
          for (int ch = 0; ch < x.c; ++ch, ++o) {
            T best = x.at(i, oy * 2, ox * 2, ch);
            std::size_t best_idx = &x.at(i, oy * 2, ox * 2, ch) - x.v.data();
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const T cand = x.at(i, oy * 2 + dy, ox * 2 + dx, ch);
                if (cand > best) {
                  best = cand;
                  best_idx = &x.at(i, oy * 2 + dy, ox * 2 + dx, ch) - x.v.data();
                }
              }
            y.v[o] = best;
            argmax_[o] = best_idx;
          }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    Tensor4<T> dx(n_, in_h_, in_w_, c_);
    for (std::size_t o = 0; o < dy.v.size(); ++o) dx.v[argmax_[o]] += dy.v[o];
    return dx;
  }
};

/// Structured dropout: zeroes square blocks of the map (mask shared across
/// channels) and rescales survivors to preserve the expected activation.
template <typename T>
struct DropBlock {
  int block_size = 3;
  T drop_prob = T(0.1);

  Tensor4<T> mask_;  // per-(image, y, x); 1 channel
  T scale_ = T(1);

  Tensor4<T> forward(const Tensor4<T>& x, bool active, Rng& rng) {
    if (!active) {
      mask_ = Tensor4<T>();
      return x;
    }
    const int bs = std::min({block_size, x.h, x.w});
    const int valid_h = x.h - bs + 1, valid_w = x.w - bs + 1;
    const double gamma = double(drop_prob) * (double(x.h) * x.w) / (double(bs) * bs) /
                         (double(valid_h) * valid_w);
    mask_ = Tensor4<T>(x.n, x.h, x.w, 1);
    std::fill(mask_.v.begin(), mask_.v.end(), T(1));
    for (int i = 0; i < x.n; ++i)
      for (int cy = 0; cy < valid_h; ++cy)
        for (int cx = 0; cx < valid_w; ++cx)
          if (rng.uniform() < gamma)
            for (int dy = 0; dy < bs; ++dy)
              for (int dx = 0; dx < bs; ++dx) mask_.at(i, cy + dy, cx + dx, 0) = T(0);
    double kept = 0;
    for (const T& v : mask_.v) kept += double(v);
    scale_ = kept > 0 ? T(mask_.v.size() / kept) : T(0);
    Tensor4<T> y = x;
    for (int i = 0; i < x.n; ++i)
      for (int yy = 0; yy < x.h; ++yy)
        for (int xx = 0; xx < x.w; ++xx) {
          const T f = mask_.at(i, yy, xx, 0) * scale_;
          for (int ch = 0; ch < x.c; ++ch) y.at(i, yy, xx, ch) *= f;
        }
    return y;
  }

  Tensor4<T> backward(const Tensor4<T>& dy) {
    if (mask_.v.empty()) return dy;
    Tensor4<T> dx = dy;
    for (int i = 0; i < dy.n; ++i)
      for (int yy = 0; yy < dy.h; ++yy)
        for (int xx = 0; xx < dy.w; ++xx) {
          const T f = mask_.at(i, yy, xx, 0) * scale_;
          for (int ch = 0; ch < dy.c; ++ch) dx.at(i, yy, xx, ch) *= f;
        }
    return dx;
  }
};

}  // namespace bml::model
