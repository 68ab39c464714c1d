#pragma once

// Meta-test protocol: embed support and query with both view heads, flatten,
// match queries to class-mean prototypes by negative squared Euclidean
// distance, and fuse the two branches' logits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bml/core/common.hpp"
#include "bml/core/rng.hpp"
#include "bml/core/tensor.hpp"
#include "bml/data/degrade.hpp"
#include "bml/data/episode.hpp"
#include "bml/losses.hpp"
#include "bml/model/backbone.hpp"

namespace bml::eval {

/// Read-only view of a model: images in, dual feature maps out.
template <typename T>
using Embedder = std::function<model::DualViewFeatures<T>(const Tensor4<T>&)>;

template <typename T>
Embedder<T> make_embedder(model::DualViewNet<T>& net) {
  return [&net](const Tensor4<T>& images) { return net.forward(images, /*train=*/false); };
}

struct EvalResult {
  double mean_accuracy = 0.0;  // percent
  double ci95 = 0.0;           // half-width, percent
  std::vector<double> per_episode;
  int n_episodes = 0;
  data::EpisodeSpec spec;
  std::string branch;  // fused | global | local

  nlohmann::json to_json() const {
    return {{"branch", branch},
            {"mean_accuracy", mean_accuracy},
            {"ci95", ci95},
            {"n_episodes", n_episodes},
            {"n_way", spec.n_way},
            {"k_shot", spec.k_shot},
            {"q_query", spec.q_query},
            {"per_episode", per_episode}};
  }
};

/// mean and 1.96*std/sqrt(n) over per-episode accuracies (sample std, n-1).
inline EvalResult summarize(std::vector<double> per_episode, const data::EpisodeSpec& spec,
                            std::string branch) {
  EvalResult r;
  r.spec = spec;
  r.branch = std::move(branch);
  r.n_episodes = static_cast<int>(per_episode.size());
  check(r.n_episodes > 0, "no episodes to summarize");
  double mean = 0.0;
  for (double a : per_episode) mean += a;
  mean /= r.n_episodes;
  double var = 0.0;
  for (double a : per_episode) var += (a - mean) * (a - mean);
  const double stdev = r.n_episodes > 1 ? std::sqrt(var / (r.n_episodes - 1)) : 0.0;
  r.mean_accuracy = mean;
  r.ci95 = 1.96 * stdev / std::sqrt(double(r.n_episodes));
  r.per_episode = std::move(per_episode);
  return r;
}

/// Negative squared Euclidean distances from each query row to each class-mean
/// prototype of the support rows.
template <typename T>
Mat<T> proto_logits(const Mat<T>& support_flat, const std::vector<int>& support_labels, int n_way,
                    const Mat<T>& query_flat) {
  check(support_flat.cols == query_flat.cols, "support/query embedding dims differ");
  Mat<T> protos = losses::compute_prototypes(support_flat, support_labels, n_way);
  Mat<T> logits(query_flat.rows, n_way);
  for (int i = 0; i < query_flat.rows; ++i)
    for (int j = 0; j < n_way; ++j) {
      T d2 = T(0);
      const T* q = query_flat.row(i);
      const T* p = protos.row(j);
      for (int k = 0; k < query_flat.cols; ++k) {
        const T d = q[k] - p[k];
        d2 += d * d;
      }
      logits.at(i, j) = -d2;
    }
  return logits;
}

template <typename T>
struct EpisodeLogits {
  Mat<T> global, local;  // [N*Q, N]
};

/// Embeds support+query in one batch and computes both branches' logits.
template <typename T>
EpisodeLogits<T> episode_logits(const Embedder<T>& embed, const data::Episode& ep) {
  check(!ep.support.empty() && !ep.query.empty(), "episode is empty");
  const int n_way = static_cast<int>(ep.class_map.size());
  Tensor4<T> batch = data::to_batch<T>(ep);
  model::DualViewFeatures<T> feats = embed(batch);
  const int n_sup = static_cast<int>(ep.support.size());

  auto split_rows = [&](const Tensor4<T>& map, int lo, int hi) {
    Mat<T> flat = flatten_features(map);
    Mat<T> out(hi - lo, flat.cols);
    for (int r = lo; r < hi; ++r)
      for (int c = 0; c < flat.cols; ++c) out.at(r - lo, c) = flat.at(r, c);
    return out;
  };
  const std::vector<int> sup_labels = data::local_labels(ep.support);
  const int total = n_sup + static_cast<int>(ep.query.size());

  EpisodeLogits<T> out;
  out.global = proto_logits(split_rows(feats.global_map, 0, n_sup), sup_labels, n_way,
                            split_rows(feats.global_map, n_sup, total));
  out.local = proto_logits(split_rows(feats.local_map, 0, n_sup), sup_labels, n_way,
                           split_rows(feats.local_map, n_sup, total));
  return out;
}

enum class FusionMode { sum, softmax_sum };

inline FusionMode parse_fusion(const std::string& s) {
  if (s == "sum") return FusionMode::sum;
  if (s == "softmax_sum") return FusionMode::softmax_sum;
  fail("unknown fusion mode: ", s, " (want sum|softmax_sum)");
}

/// Binocular integration: elementwise sum of branch logits, or the sum of
/// per-branch softmax probabilities when branch scales differ.
template <typename T>
Mat<T> fuse_logits(const Mat<T>& global, const Mat<T>& local,
                   FusionMode mode = FusionMode::sum) {
  check(global.rows == local.rows && global.cols == local.cols, "fusion shape mismatch");
  Mat<T> out(global.rows, global.cols);
  if (mode == FusionMode::sum) {
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = global.v[i] + local.v[i];
    return out;
  }
  auto softmax_row = [](const T* z, int n, std::vector<T>& p) {
    T mx = z[0];
    for (int k = 1; k < n; ++k) mx = std::max(mx, z[k]);
    T denom = T(0);
    for (int k = 0; k < n; ++k) {
      p[std::size_t(k)] = std::exp(z[k] - mx);
      denom += p[std::size_t(k)];
    }
    for (int k = 0; k < n; ++k) p[std::size_t(k)] /= denom;
  };
  std::vector<T> pg(std::size_t(global.cols)), pl(std::size_t(global.cols));
  for (int i = 0; i < global.rows; ++i) {
    softmax_row(global.row(i), global.cols, pg);
    softmax_row(local.row(i), local.cols, pl);
    for (int k = 0; k < global.cols; ++k) out.at(i, k) = pg[std::size_t(k)] + pl[std::size_t(k)];
  }
  return out;
}

/// Argmax with ties broken toward the lowest class index.
template <typename T>
int argmax_row(const T* row, int n) {
  int best = 0;
  for (int k = 1; k < n; ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

template <typename T>
double accuracy_percent(const Mat<T>& logits, const std::vector<int>& labels) {
  check(logits.rows == static_cast<int>(labels.size()), "accuracy: row/label count mismatch");
  int correct = 0;
  for (int i = 0; i < logits.rows; ++i)
    if (argmax_row(logits.row(i), logits.cols) == labels[std::size_t(i)]) ++correct;
  return 100.0 * correct / logits.rows;
}

struct MetaTestOptions {
  int n_episodes = 2000;
  std::uint64_t seed = 0;
  std::vector<data::Degradation> degradations;  // applied to support and query
  FusionMode fusion = FusionMode::sum;
};

struct MetaTestResult {
  EvalResult fused, global, local;

  nlohmann::json to_json() const {
    return {{"fused", fused.to_json()}, {"global", global.to_json()}, {"local", local.to_json()}};
  }
};

/// Applies the degradation stack to every episode image, then resizes back to
/// the model's input size if a resize degradation changed it.
inline void degrade_episode(data::Episode& ep, const std::vector<data::Degradation>& degs,
                            int image_size, std::uint64_t ep_seed) {
  if (degs.empty()) return;
  auto run = [&](std::vector<data::EpisodeItem>& items, std::uint64_t side) {
    for (std::size_t i = 0; i < items.size(); ++i) {
      for (std::size_t d = 0; d < degs.size(); ++d)
        items[i].image = data::apply_degradation(
            items[i].image, degs[d], derive_seed(ep_seed, {0xDE6u, side, std::uint64_t(i), d}));
      if (items[i].image.h != image_size || items[i].image.w != image_size)
        items[i].image = data::resize_bilinear(items[i].image, image_size, image_size);
    }
  };
  run(ep.support, 0);
  run(ep.query, 1);
}

template <typename T>
MetaTestResult meta_test(const Embedder<T>& embed, const data::DatasetSplit& split,
                         const data::EpisodeSpec& spec, const MetaTestOptions& opts) {
  check(opts.n_episodes > 0, "meta_test needs at least one episode");
  std::vector<double> acc_f, acc_g, acc_l;
  acc_f.reserve(std::size_t(opts.n_episodes));
  for (int e = 0; e < opts.n_episodes; ++e) {
    const std::uint64_t ep_seed = derive_seed(opts.seed, {0xE9u, std::uint64_t(e)});
    data::Episode ep = data::sample_episode(split, spec, ep_seed);
    degrade_episode(ep, opts.degradations, split.image_size, ep_seed);
    EpisodeLogits<T> logits = episode_logits(embed, ep);
    const Mat<T> fused = fuse_logits(logits.global, logits.local, opts.fusion);
    const std::vector<int> labels = data::local_labels(ep.query);
    acc_f.push_back(accuracy_percent(fused, labels));
    acc_g.push_back(accuracy_percent(logits.global, labels));
    acc_l.push_back(accuracy_percent(logits.local, labels));
  }
  MetaTestResult r;
  r.fused = summarize(std::move(acc_f), spec, "fused");
  r.global = summarize(std::move(acc_g), spec, "global");
  r.local = summarize(std::move(acc_l), spec, "local");
  return r;
}

// ---------------------------------------------------------------------------
// diagnostics
// ---------------------------------------------------------------------------

struct RankingReport {
  // per query: classes (split class ids) ordered by descending fused score,
  // ties broken by ascending class id
  std::vector<std::vector<std::pair<int, double>>> per_query;
  std::vector<int> truth_rank;  // 1-based position of the true class
  double mean_truth_rank = 0.0;
};

template <typename T>
RankingReport similarity_ranking(const Embedder<T>& embed, const data::Episode& ep,
                                 FusionMode fusion = FusionMode::sum) {
  EpisodeLogits<T> logits = episode_logits(embed, ep);
  const Mat<T> fused = fuse_logits(logits.global, logits.local, fusion);
  RankingReport rep;
  for (int i = 0; i < fused.rows; ++i) {
    std::vector<std::pair<int, double>> row;  // (local class, score)
    for (int j = 0; j < fused.cols; ++j) row.emplace_back(j, double(fused.at(i, j)));
    std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    const int truth = ep.query[std::size_t(i)].local_label;
    int rank = 0;
    for (std::size_t p = 0; p < row.size(); ++p)
      if (row[p].first == truth) rank = static_cast<int>(p) + 1;
    std::vector<std::pair<int, double>> named;
    for (auto& [local, score] : row)
      named.emplace_back(ep.class_map[std::size_t(local)], score);
    rep.per_query.push_back(std::move(named));
    rep.truth_rank.push_back(rank);
    rep.mean_truth_rank += rank;
  }
  if (!rep.truth_rank.empty()) rep.mean_truth_rank /= double(rep.truth_rank.size());
  return rep;
}

/// Mean pairwise (plain Euclidean) distance between the local-branch
/// prototypes, averaged over seeded episodes.
template <typename T>
double prototype_dispersion(const Embedder<T>& embed, const data::DatasetSplit& split,
                            const data::EpisodeSpec& spec, int n_episodes, std::uint64_t seed) {
  check(n_episodes > 0, "dispersion needs at least one episode");
  double total = 0.0;
  for (int e = 0; e < n_episodes; ++e) {
    data::Episode ep =
        data::sample_episode(split, spec, derive_seed(seed, {0xD15u, std::uint64_t(e)}));
    Tensor4<T> batch = data::to_batch<T>(ep.support);
    model::DualViewFeatures<T> feats = embed(batch);
    Mat<T> protos = losses::compute_prototypes(flatten_features(feats.local_map),
                                               data::local_labels(ep.support), spec.n_way);
    double sum = 0.0;
    int pairs = 0;
    for (int a = 0; a < protos.rows; ++a)
      for (int b = a + 1; b < protos.rows; ++b) {
        double d2 = 0.0;
        for (int k = 0; k < protos.cols; ++k) {
          const double d = double(protos.at(a, k)) - double(protos.at(b, k));
          d2 += d * d;
        }
        sum += std::sqrt(d2);
        ++pairs;
      }
    total += pairs > 0 ? sum / pairs : 0.0;
  }
  return total / n_episodes;
}

/// CSV rows of (image id, class, branch, flattened embedding); one row per
/// (image, branch). First line declares the embedding dimension.
template <typename T>
void export_embeddings(const Embedder<T>& embed, const data::DatasetSplit& split,
                       int max_per_class, const std::string& out_path) {
  check(max_per_class >= 1, "max_per_class must be >= 1");
  std::ofstream out(out_path);
  check(out.good(), "cannot write ", out_path);
  int dim = -1;
  std::string body;
  for (int cl = 0; cl < split.n_classes(); ++cl) {
    const auto& sources = split.images[std::size_t(cl)];
    const int take = std::min<int>(max_per_class, static_cast<int>(sources.size()));
    for (int i = 0; i < take; ++i) {
      data::Image img = sources[std::size_t(i)].load(split.image_size);
      Tensor4<T> batch(1, img.h, img.w, 3);
      for (std::size_t j = 0; j < img.px.size(); ++j) batch.v[j] = T(img.px[j]);
      model::DualViewFeatures<T> feats = embed(batch);
      Mat<T> g = flatten_features(feats.global_map);
      Mat<T> l = flatten_features(feats.local_map);
      if (dim < 0) dim = g.cols;
      for (const char* branch : {"global", "local"}) {
        const Mat<T>& m = branch[0] == 'g' ? g : l;
        body += split.classes[std::size_t(cl)] + "/" + std::to_string(i) + "," +
                split.classes[std::size_t(cl)] + "," + branch;
        for (int k = 0; k < m.cols; ++k) body += "," + std::to_string(double(m.at(0, k)));
        body += "\n";
      }
    }
  }
  out << "# embedding_dim=" << dim << "\n";
  out << "image_id,class,branch,embedding...\n";
  out << body;
}

}  // namespace bml::eval
