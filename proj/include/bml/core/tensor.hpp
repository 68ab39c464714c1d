#pragma once

#include <cstddef>
#include <vector>

#include "bml/core/common.hpp"

namespace bml {

/// Dense NHWC tensor. Feature maps are [batch, h, w, channels]; flattening is
/// row-major, i.e. (row, col, channel) order.
template <typename T>
struct Tensor4 {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int h_, int w_, int c_)
      : n(n_), h(h_), w(w_), c(c_), v(static_cast<std::size_t>(n_) * h_ * w_ * c_, T(0)) {}

  static Tensor4 zeros_like(const Tensor4& o) { return Tensor4(o.n, o.h, o.w, o.c); }

  std::size_t size() const { return v.size(); }
  int per_image() const { return h * w * c; }

  T& at(int i, int y, int x, int ch) {
    return v[((static_cast<std::size_t>(i) * h + y) * w + x) * c + ch];
  }
  const T& at(int i, int y, int x, int ch) const {
    return v[((static_cast<std::size_t>(i) * h + y) * w + x) * c + ch];
  }

  T* image(int i) { return v.data() + static_cast<std::size_t>(i) * per_image(); }
  const T* image(int i) const { return v.data() + static_cast<std::size_t>(i) * per_image(); }

  bool same_shape(const Tensor4& o) const { return n == o.n && h == o.h && w == o.w && c == o.c; }

  bool all_finite() const {
    for (const T& x : v)
      if (!is_finite(x)) return false;
    return true;
  }
};

/// Row-major matrix.
template <typename T>
struct Mat {
  int rows = 0, cols = 0;
  std::vector<T> v;

  Mat() = default;
  Mat(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, T(0)) {}

  T& at(int r, int c_) { return v[static_cast<std::size_t>(r) * cols + c_]; }
  const T& at(int r, int c_) const { return v[static_cast<std::size_t>(r) * cols + c_]; }

  T* row(int r) { return v.data() + static_cast<std::size_t>(r) * cols; }
  const T* row(int r) const { return v.data() + static_cast<std::size_t>(r) * cols; }

  std::size_t size() const { return v.size(); }
};

/// [n,h,w,c] -> [n, h*w*c], preserving (row, col, channel) order per image.
template <typename T>
Mat<T> flatten_features(const Tensor4<T>& t) {
  Mat<T> m(t.n, t.per_image());
  m.v = t.v;
  return m;
}

template <typename T>
Tensor4<T> unflatten_features(const Mat<T>& m, int h, int w, int c) {
  check(m.cols == h * w * c, "unflatten_features: dim mismatch");
  Tensor4<T> t(m.rows, h, w, c);
  t.v = m.v;
  return t;
}

}  // namespace bml
