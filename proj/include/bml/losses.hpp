#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "bml/core/common.hpp"
#include "bml/core/tensor.hpp"

#include <nlohmann/json.hpp>

namespace bml::losses {

/// Schedule state of the elastic constraint. The push grows linearly with
/// training progress (epoch / total_epochs) and with per-sample easiness.
struct ElasticConfig {
  double alpha1 = 5.5;   // cross-epoch push scale
  double alpha2 = 0.1;   // cross-task push scale
  int epoch = 0;         // current e, 0 <= e <= total_epochs
  int total_epochs = 1;  // E
  bool enabled = true;

  void validate() const {
    check(total_epochs >= 1, "ElasticConfig: total_epochs must be >= 1");
    check(epoch >= 0 && epoch <= total_epochs, "ElasticConfig: epoch out of [0, E]");
    check(alpha1 >= 0.0 && alpha2 >= 0.0, "ElasticConfig: negative scale factor");
  }
};

struct LossWeights {
  double alpha = 4.0;  // global
  double beta = 2.0;   // local
  double gamma = 1.0;  // mutual

  void validate() const {
    check(alpha >= 0.0 && beta >= 0.0 && gamma >= 0.0, "LossWeights must be non-negative");
  }
};

/// Per-step scalars written to the run log.
struct LossReport {
  double global_loss = 0.0;
  double local_loss = 0.0;
  double mutual_loss = 0.0;
  double total_loss = 0.0;
  double mean_delta = 0.0;  // mean logit margin over query points
  double mean_d_el = 0.0;   // mean elastic push over query points

  nlohmann::json to_json() const {
    return {{"global", global_loss}, {"local", local_loss},   {"mutual", mutual_loss},
            {"total", total_loss},   {"mean_delta", mean_delta}, {"mean_d_el", mean_d_el}};
  }
};

/// Raised when the combined loss stops being finite.
class DivergenceError : public Error {
public:
  DivergenceError(const std::string& msg, LossReport rep) : Error(msg), report(rep) {}
  LossReport report;
};

namespace detail {
template <typename T>
T logsumexp(const T* z, int n) {
  T m = z[0];
  for (int i = 1; i < n; ++i) m = std::max(m, z[i]);
  T s = T(0);
  for (int i = 0; i < n; ++i) s += std::exp(z[i] - m);
  return m + std::log(s);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Point-wise global classification loss.
// Each spatial point of the score map is classified against the image's base
// class; the loss averages -log softmax over points, then over images.
// ---------------------------------------------------------------------------

template <typename T>
struct GlobalLossResult {
  T value = T(0);
  Tensor4<T> grad_scores;
};

template <typename T>
GlobalLossResult<T> global_pointwise_loss(const Tensor4<T>& scores, std::span<const int> labels) {
  check(scores.n == static_cast<int>(labels.size()), "global_pointwise_loss: batch/label mismatch");
  check(scores.c >= 2, "global_pointwise_loss: need at least 2 classes");
  const int points = scores.h * scores.w;
  GlobalLossResult<T> res;
  res.grad_scores = Tensor4<T>::zeros_like(scores);
  const T inv = T(1) / (T(scores.n) * T(points));
  double total = 0.0;
  for (int i = 0; i < scores.n; ++i) {
    const int y_true = labels[static_cast<std::size_t>(i)];
    check(y_true >= 0 && y_true < scores.c, "global_pointwise_loss: label ", y_true,
          " out of range [0,", scores.c, ")");
    for (int p = 0; p < points; ++p) {
      const T* z = scores.v.data() + (static_cast<std::size_t>(i) * points + p) * scores.c;
      T* g = res.grad_scores.v.data() + (static_cast<std::size_t>(i) * points + p) * scores.c;
      const T lse = detail::logsumexp(z, scores.c);
      total += static_cast<double>(lse - z[y_true]);
      for (int k = 0; k < scores.c; ++k) g[k] = std::exp(z[k] - lse) * inv;
      g[y_true] -= inv;
    }
  }
  res.value = static_cast<T>(total) * inv;
  return res;
}

// ---------------------------------------------------------------------------
// Prototypes: per-class mean of support embeddings.
// ---------------------------------------------------------------------------

template <typename T>
Mat<T> compute_prototypes(const Mat<T>& support, std::span<const int> labels, int n_classes) {
  check(support.rows == static_cast<int>(labels.size()), "compute_prototypes: rows/labels mismatch");
  Mat<T> protos(n_classes, support.cols);
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (int r = 0; r < support.rows; ++r) {
    const int cl = labels[static_cast<std::size_t>(r)];
    check(cl >= 0 && cl < n_classes, "compute_prototypes: label out of range");
    ++counts[static_cast<std::size_t>(cl)];
    const T* src = support.row(r);
    T* dst = protos.row(cl);
    for (int c = 0; c < support.cols; ++c) dst[c] += src[c];
  }
  for (int cl = 0; cl < n_classes; ++cl) {
    check(counts[static_cast<std::size_t>(cl)] > 0, "compute_prototypes: class ", cl, " has no support rows");
    const T inv = T(1) / T(counts[static_cast<std::size_t>(cl)]);
    T* dst = protos.row(cl);
    for (int c = 0; c < support.cols; ++c) dst[c] *= inv;
  }
  return protos;
}

// ---------------------------------------------------------------------------
// Prototypical matching loss over flattened embeddings.
// Logits are negative (squared) Euclidean distances to the prototypes.
// ---------------------------------------------------------------------------

template <typename T>
struct LocalLossResult {
  T value = T(0);
  Mat<T> grad_query;
  Mat<T> grad_protos;
};

template <typename T>
LocalLossResult<T> local_proto_loss(const Mat<T>& query, const Mat<T>& protos,
                                    std::span<const int> labels, bool squared = true) {
  const int nq = query.rows, n = protos.rows, d = query.cols;
  check(protos.cols == d, "local_proto_loss: dim mismatch");
  check(n >= 2, "local_proto_loss: need at least 2 classes");
  check(nq == static_cast<int>(labels.size()), "local_proto_loss: rows/labels mismatch");

  LocalLossResult<T> res;
  res.grad_query = Mat<T>(nq, d);
  res.grad_protos = Mat<T>(n, d);
  std::vector<T> z(static_cast<std::size_t>(n));
  std::vector<T> dist(static_cast<std::size_t>(n));
  const T inv = T(1) / T(nq);
  double total = 0.0;
  for (int i = 0; i < nq; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    check(y >= 0 && y < n, "local_proto_loss: label out of range");
    const T* q = query.row(i);
    for (int j = 0; j < n; ++j) {
      const T* c = protos.row(j);
      T s = T(0);
      for (int k = 0; k < d; ++k) {
        const T df = q[k] - c[k];
        s += df * df;
      }
      dist[static_cast<std::size_t>(j)] = s;
      z[static_cast<std::size_t>(j)] = squared ? -s : -std::sqrt(s);
    }
    const T lse = detail::logsumexp(z.data(), n);
    total += static_cast<double>(lse - z[static_cast<std::size_t>(y)]);
    for (int j = 0; j < n; ++j) {
      T gz = std::exp(z[static_cast<std::size_t>(j)] - lse) * inv;  // d(loss)/d(z_j)
      if (j == y) gz -= inv;
      const T* c = protos.row(j);
      T* gq = res.grad_query.row(i);
      T* gc = res.grad_protos.row(j);
      T scale;
      if (squared) {
        scale = T(-2) * gz;  // dz/dq = -2 (q - c)
      } else {
        const T dd = std::sqrt(std::max(dist[static_cast<std::size_t>(j)], T(1e-24)));
        scale = -gz / dd;  // dz/dq = -(q - c)/||q - c||
      }
      for (int k = 0; k < d; ++k) {
        const T df = q[k] - c[k];
        gq[k] += scale * df;
        gc[k] -= scale * df;
      }
    }
  }
  res.value = static_cast<T>(total) * inv;
  return res;
}

// ---------------------------------------------------------------------------
// Elastic constraint: a schedule-driven push applied to the positive-class
// logit of one query point.
//   dis_P = logit at the positive class,
//   dis_N = largest logit among negatives (nearest negative prototype),
//   delta = dis_P - dis_N,
//   d_EL  = alpha1 * (e/E) * sigmoid(alpha2 * delta).
// Logits are negative (squared) distances, so easy points (positive far
// closer than the nearest negative) receive the largest push.
// ---------------------------------------------------------------------------

template <typename T>
T elastic_constraint(std::span<const T> logits, int positive_idx, const ElasticConfig& cfg) {
  cfg.validate();
  const int n = static_cast<int>(logits.size());
  check(n >= 2, "elastic_constraint: need at least 2 classes");
  check(positive_idx >= 0 && positive_idx < n, "elastic_constraint: positive_idx out of range");
  T dis_n = std::numeric_limits<T>::lowest();
  for (int j = 0; j < n; ++j)
    if (j != positive_idx) dis_n = std::max(dis_n, logits[static_cast<std::size_t>(j)]);
  const T delta = logits[static_cast<std::size_t>(positive_idx)] - dis_n;
  const T progress = static_cast<T>(cfg.alpha1) * T(cfg.epoch) / T(cfg.total_epochs);
  return progress / (T(1) + std::exp(static_cast<T>(-cfg.alpha2) * delta));
}

// ---------------------------------------------------------------------------
// Elastic local loss over spatial maps.
// Per query point (p,q): per-class logits are negative (squared) distances
// between the query's point vector and each prototype's point vector; the
// positive-class numerator is damped by exp(-d_EL) while the denominator is
// left untouched, so the point probability only shrinks. d_EL enters as a
// schedule constant and carries no gradient.
// ---------------------------------------------------------------------------

template <typename T>
struct ElasticMatrix {
  Mat<T> d_el;       // [n_query, points]
  Mat<T> delta;      // [n_query, points]
  double mean_delta = 0.0;
  double mean_d_el = 0.0;
};

template <typename T>
struct ElasticLossResult {
  T value = T(0);
  Tensor4<T> grad_query;
  Tensor4<T> grad_protos;
  double mean_delta = 0.0;
  double mean_d_el = 0.0;
};

namespace detail {

template <typename T>
void point_logits(const Tensor4<T>& query, const Tensor4<T>& protos, int i, int p, bool squared,
                  T* z) {
  const int m = query.c;
  const T* q = query.v.data() + (static_cast<std::size_t>(i) * query.h * query.w + p) * m;
  for (int j = 0; j < protos.n; ++j) {
    const T* c = protos.v.data() + (static_cast<std::size_t>(j) * protos.h * protos.w + p) * m;
    T s = T(0);
    for (int k = 0; k < m; ++k) {
      const T df = q[k] - c[k];
      s += df * df;
    }
    z[j] = squared ? -s : -std::sqrt(s);
  }
}

}  // namespace detail

/// Computes the d_EL schedule matrix for every (query, point) pair.
template <typename T>
ElasticMatrix<T> compute_elastic_matrix(const Tensor4<T>& query, const Tensor4<T>& protos,
                                        std::span<const int> labels, const ElasticConfig& cfg,
                                        bool squared = true) {
  cfg.validate();
  const int points = query.h * query.w;
  const int n = protos.n;
  ElasticMatrix<T> out;
  out.d_el = Mat<T>(query.n, points);
  out.delta = Mat<T>(query.n, points);
  std::vector<T> z(static_cast<std::size_t>(n));
  double sum_delta = 0.0, sum_del = 0.0;
  for (int i = 0; i < query.n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    for (int p = 0; p < points; ++p) {
      detail::point_logits(query, protos, i, p, squared, z.data());
      T dis_n = std::numeric_limits<T>::lowest();
      for (int j = 0; j < n; ++j)
        if (j != y) dis_n = std::max(dis_n, z[static_cast<std::size_t>(j)]);
      const T delta = z[static_cast<std::size_t>(y)] - dis_n;
      T del = T(0);
      if (cfg.enabled) {
        const T progress = static_cast<T>(cfg.alpha1) * T(cfg.epoch) / T(cfg.total_epochs);
        del = progress / (T(1) + std::exp(static_cast<T>(-cfg.alpha2) * delta));
      }
      out.delta.at(i, p) = delta;
      out.d_el.at(i, p) = del;
      sum_delta += static_cast<double>(delta);
      sum_del += static_cast<double>(del);
    }
  }
  const double cnt = static_cast<double>(query.n) * points;
  out.mean_delta = sum_delta / cnt;
  out.mean_d_el = sum_del / cnt;
  return out;
}

/// Elastic local loss with an externally supplied (frozen) d_EL matrix.
template <typename T>
ElasticLossResult<T> elastic_local_loss_given_del(const Tensor4<T>& query, const Tensor4<T>& protos,
                                                  std::span<const int> labels, const Mat<T>& d_el,
                                                  bool squared = true) {
  check(query.h == protos.h && query.w == protos.w && query.c == protos.c,
        "elastic_local_loss: query/prototype spatial shape mismatch");
  check(query.n == static_cast<int>(labels.size()), "elastic_local_loss: rows/labels mismatch");
  const int n = protos.n;
  check(n >= 2, "elastic_local_loss: need at least 2 classes");
  const int points = query.h * query.w;
  const int m = query.c;
  check(d_el.rows == query.n && d_el.cols == points, "elastic_local_loss: d_el shape mismatch");

  ElasticLossResult<T> res;
  res.grad_query = Tensor4<T>::zeros_like(query);
  res.grad_protos = Tensor4<T>::zeros_like(protos);
  std::vector<T> z(static_cast<std::size_t>(n));
  const T inv = T(1) / (T(query.n) * T(points));
  double total = 0.0;
  for (int i = 0; i < query.n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    check(y >= 0 && y < n, "elastic_local_loss: label out of range");
    for (int p = 0; p < points; ++p) {
      detail::point_logits(query, protos, i, p, squared, z.data());
      const T lse = detail::logsumexp(z.data(), n);
      // -log P_hat = lse - (z_pos - d_EL); the denominator keeps unmodified logits.
      total += static_cast<double>(lse - z[static_cast<std::size_t>(y)] + d_el.at(i, p));
      const T* q = query.v.data() + (static_cast<std::size_t>(i) * points + p) * m;
      T* gq = res.grad_query.v.data() + (static_cast<std::size_t>(i) * points + p) * m;
      for (int j = 0; j < n; ++j) {
        T gz = std::exp(z[static_cast<std::size_t>(j)] - lse) * inv;
        if (j == y) gz -= inv;
        const T* c = protos.v.data() + (static_cast<std::size_t>(j) * points + p) * m;
        T* gc = res.grad_protos.v.data() + (static_cast<std::size_t>(j) * points + p) * m;
        T scale;
        if (squared) {
          scale = T(-2) * gz;
        } else {
          T s = T(0);
          for (int k = 0; k < m; ++k) {
            const T df = q[k] - c[k];
            s += df * df;
          }
          scale = -gz / std::sqrt(std::max(s, T(1e-24)));
        }
        for (int k = 0; k < m; ++k) {
          const T df = q[k] - c[k];
          gq[k] += scale * df;
          gc[k] -= scale * df;
        }
      }
    }
  }
  res.value = static_cast<T>(total) * inv;
  return res;
}

template <typename T>
ElasticLossResult<T> elastic_local_loss(const Tensor4<T>& query, const Tensor4<T>& protos,
                                        std::span<const int> labels, const ElasticConfig& cfg,
                                        bool squared = true) {
  ElasticMatrix<T> em = compute_elastic_matrix(query, protos, labels, cfg, squared);
  ElasticLossResult<T> res = elastic_local_loss_given_del(query, protos, labels, em.d_el, squared);
  res.mean_delta = em.mean_delta;
  res.mean_d_el = em.mean_d_el;
  return res;
}

/// Point-wise prototypes: per-class mean of support maps at every location.
template <typename T>
Tensor4<T> pointwise_prototypes(const Tensor4<T>& support, std::span<const int> labels,
                                int n_classes) {
  check(support.n == static_cast<int>(labels.size()), "pointwise_prototypes: rows/labels mismatch");
  Tensor4<T> protos(n_classes, support.h, support.w, support.c);
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  const int per = support.per_image();
  for (int r = 0; r < support.n; ++r) {
    const int cl = labels[static_cast<std::size_t>(r)];
    check(cl >= 0 && cl < n_classes, "pointwise_prototypes: label out of range");
    ++counts[static_cast<std::size_t>(cl)];
    const T* src = support.image(r);
    T* dst = protos.image(cl);
    for (int k = 0; k < per; ++k) dst[k] += src[k];
  }
  for (int cl = 0; cl < n_classes; ++cl) {
    check(counts[static_cast<std::size_t>(cl)] > 0, "pointwise_prototypes: class ", cl,
          " has no support rows");
    const T inv = T(1) / T(counts[static_cast<std::size_t>(cl)]);
    T* dst = protos.image(cl);
    for (int k = 0; k < per; ++k) dst[k] *= inv;
  }
  return protos;
}

// ---------------------------------------------------------------------------
// Cross-view mimicry loss: symmetric KL divergence between the softmax of the
// two flattened feature maps, averaged over images. Gradients flow into both
// branches.
// ---------------------------------------------------------------------------

template <typename T>
struct MutualLossResult {
  T value = T(0);
  Tensor4<T> grad_global;
  Tensor4<T> grad_local;
};

template <typename T>
MutualLossResult<T> mutual_loss(const Tensor4<T>& gmap, const Tensor4<T>& lmap,
                                double temperature = 1.0) {
  check(gmap.same_shape(lmap), "mutual_loss: shape mismatch");
  check(temperature > 0.0, "mutual_loss: temperature must be positive");
  const int d = gmap.per_image();
  check(d >= 2, "mutual_loss: need at least 2 feature entries");
  MutualLossResult<T> res;
  res.grad_global = Tensor4<T>::zeros_like(gmap);
  res.grad_local = Tensor4<T>::zeros_like(lmap);
  const T tau = static_cast<T>(temperature);
  const T inv_b = T(1) / T(gmap.n);
  std::vector<T> la(static_cast<std::size_t>(d)), lb(static_cast<std::size_t>(d));
  double total = 0.0;
  for (int i = 0; i < gmap.n; ++i) {
    const T* u = gmap.image(i);
    const T* v = lmap.image(i);
    // log-softmax of each flattened map
    T mu = u[0], mv = v[0];
    for (int k = 1; k < d; ++k) {
      mu = std::max(mu, u[k]);
      mv = std::max(mv, v[k]);
    }
    T su = T(0), sv = T(0);
    for (int k = 0; k < d; ++k) {
      su += std::exp((u[k] - mu) / tau);
      sv += std::exp((v[k] - mv) / tau);
    }
    const T lse_u = mu / tau + std::log(su);
    const T lse_v = mv / tau + std::log(sv);
    T kl_ab = T(0), kl_ba = T(0);  // KL(a||b), KL(b||a) with a = softmax(u), b = softmax(v)
    for (int k = 0; k < d; ++k) {
      la[static_cast<std::size_t>(k)] = u[k] / tau - lse_u;
      lb[static_cast<std::size_t>(k)] = v[k] / tau - lse_v;
      const T a = std::exp(la[static_cast<std::size_t>(k)]);
      const T b = std::exp(lb[static_cast<std::size_t>(k)]);
      const T diff = la[static_cast<std::size_t>(k)] - lb[static_cast<std::size_t>(k)];
      kl_ab += a * diff;
      kl_ba -= b * diff;
    }
    total += static_cast<double>(kl_ab + kl_ba);
    T* gu = res.grad_global.image(i);
    T* gv = res.grad_local.image(i);
    const T scale = inv_b / tau;
    for (int k = 0; k < d; ++k) {
      const T a = std::exp(la[static_cast<std::size_t>(k)]);
      const T b = std::exp(lb[static_cast<std::size_t>(k)]);
      const T diff = la[static_cast<std::size_t>(k)] - lb[static_cast<std::size_t>(k)];
      gu[k] = scale * (a - b + a * (diff - kl_ab));
      gv[k] = scale * (b - a + b * (-diff - kl_ba));
    }
  }
  res.value = static_cast<T>(total) * inv_b;
  return res;
}

// ---------------------------------------------------------------------------
// Weighted total.
// ---------------------------------------------------------------------------

template <typename T>
std::pair<T, LossReport> total_loss(T global, T local, T mutual, const LossWeights& w) {
  w.validate();
  LossReport rep;
  rep.global_loss = static_cast<double>(global);
  rep.local_loss = static_cast<double>(local);
  rep.mutual_loss = static_cast<double>(mutual);
  const T total = static_cast<T>(w.alpha) * global + static_cast<T>(w.beta) * local +
                  static_cast<T>(w.gamma) * mutual;
  rep.total_loss = static_cast<double>(total);
  if (!is_finite(total)) {
    throw DivergenceError("total_loss: non-finite loss", rep);
  }
  return {total, rep};
}

}  // namespace bml::losses
