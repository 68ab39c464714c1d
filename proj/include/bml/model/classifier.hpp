#pragma once

// Point-wise linear classifier over feature maps: a 1x1 convolution realized
// as one GEMM over all spatial points, plus a bias.

#include <cmath>
#include <string>
#include <vector>

#include "bml/core/common.hpp"
#include "bml/core/gemm.hpp"
#include "bml/core/rng.hpp"
#include "bml/core/tensor.hpp"
#include "bml/model/layers.hpp"

namespace bml::model {

template <typename T>
struct GlobalClassifier {
  int m = 0, classes = 0;
  Mat<T> w, gw;  // [m, classes]
  std::vector<T> b, gb;

  Mat<T> x_;  // points from the last forward, [n*h*w, m]
  int n_ = 0, h_ = 0, w_ = 0;

  GlobalClassifier() = default;
  GlobalClassifier(int feature_channels, int n_classes)
      : m(feature_channels), classes(n_classes), w(feature_channels, n_classes),
        gw(feature_channels, n_classes), b(static_cast<std::size_t>(n_classes), T(0)),
        gb(static_cast<std::size_t>(n_classes), T(0)) {
    check(n_classes > 0 && feature_channels > 0, "classifier dims must be positive");
  }

  void init(uint64_t seed) {
    Rng rng(derive_seed(seed, {hash_str("classifier.w")}));
    const T stdev = std::sqrt(T(1) / T(m));
    for (auto& x : w.v) x = T(rng.normal()) * stdev;
  }

  /// [n,h,w,m] features -> [n,h,w,classes] pre-softmax scores.
  Tensor4<T> forward(const Tensor4<T>& feat) {
    check(feat.c == m, "classifier: feature channels ", feat.c, " vs weights ", m);
    n_ = feat.n;
    h_ = feat.h;
    w_ = feat.w;
    x_ = Mat<T>(feat.n * feat.h * feat.w, m);
    x_.v = feat.v;
    Mat<T> y;
    matmul(x_, w, y);
    for (int r = 0; r < y.rows; ++r) {
      T* row = y.row(r);
      for (int k = 0; k < classes; ++k) row[k] += b[static_cast<std::size_t>(k)];
    }
    Tensor4<T> scores(feat.n, feat.h, feat.w, classes);
    scores.v = std::move(y.v);
    return scores;
  }

  Tensor4<T> backward(const Tensor4<T>& dscores) {
    check(dscores.n == n_ && dscores.h == h_ && dscores.w == w_ && dscores.c == classes,
          "classifier backward shape mismatch");
    Mat<T> dym(n_ * h_ * w_, classes);
    dym.v = dscores.v;
    matmul_tn_acc(x_, dym, gw);
    for (int r = 0; r < dym.rows; ++r) {
      const T* row = dym.row(r);
      for (int k = 0; k < classes; ++k) gb[static_cast<std::size_t>(k)] += row[k];
    }
    Mat<T> dx;
    matmul_nt(dym, w, dx);
    Tensor4<T> dfeat(n_, h_, w_, m);
    dfeat.v = std::move(dx.v);
    return dfeat;
  }

  void for_each_param(const ParamFn<T>& fn) {
    fn("classifier.w", w.v, gw.v);
    fn("classifier.b", b, gb);
  }

  void zero_grad() {
    std::fill(gw.v.begin(), gw.v.end(), T(0));
    std::fill(gb.begin(), gb.end(), T(0));
  }

  long parameter_count() const { return static_cast<long>(w.v.size() + b.size()); }
};

}  // namespace bml::model
