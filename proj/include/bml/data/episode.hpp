#pragma once

// Episodic sampling: N-way K-shot support/query draws for meta-test and the
// N-class uniformly sampled batches used during training.

#include <cstdint>
#include <string>
#include <vector>

#include "bml/core/common.hpp"
#include "bml/core/rng.hpp"
#include "bml/core/tensor.hpp"
#include "bml/data/dataset.hpp"

namespace bml::data {

struct EpisodeSpec {
  int n_way = 15, k_shot = 1, q_query = 6;

  void validate() const {
    check(n_way >= 1 && k_shot >= 1 && q_query >= 1, "episode spec fields must all be >= 1, got ",
          n_way, "/", k_shot, "/", q_query);
  }
};

struct EpisodeItem {
  Image image;
  int local_label = 0;   // in [0, N)
  int global_label = 0;  // class index within the source split
  int source_index = 0;  // image index within its class (for leak checks)
};

struct Episode {
  std::vector<EpisodeItem> support, query;
  std::vector<int> class_map;  // local label -> split class index
};

/// Draws N classes without replacement, then K+Q distinct images per class.
/// Pure function of (split, spec, seed).
inline Episode sample_episode(const DatasetSplit& split, const EpisodeSpec& spec,
                              std::uint64_t rng_seed) {
  spec.validate();
  check(split.n_classes() >= spec.n_way, "split ", split.name, " has ", split.n_classes(),
        " classes, episode wants ", spec.n_way);
  Rng rng(rng_seed);
  const std::vector<int> class_pick =
      rng.sample_without_replacement(split.n_classes(), spec.n_way);

  Episode ep;
  for (int local = 0; local < spec.n_way; ++local) {
    const int cls = class_pick[std::size_t(local)];
    ep.class_map.push_back(cls);
    const auto& sources = split.images[std::size_t(cls)];
    const int need = spec.k_shot + spec.q_query;
    check(int(sources.size()) >= need, "class ", split.classes[std::size_t(cls)], " has ",
          sources.size(), " images, episode wants ", need);
    const std::vector<int> img_pick = rng.sample_without_replacement(int(sources.size()), need);
    for (int j = 0; j < need; ++j) {
      EpisodeItem item;
      item.image = sources[std::size_t(img_pick[std::size_t(j)])].load(split.image_size);
      item.local_label = local;
      item.global_label = cls;
      item.source_index = img_pick[std::size_t(j)];
      (j < spec.k_shot ? ep.support : ep.query).push_back(std::move(item));
    }
  }
  return ep;
}

/// One training step's episode from the base split; optionally applies random
/// horizontal flip and 4-pixel pad-crop to every image (seed-derived).
inline Episode sample_training_batch(const DatasetSplit& base, const EpisodeSpec& train_spec,
                                     std::uint64_t rng_seed, bool augment = true) {
  Episode ep = sample_episode(base, train_spec, rng_seed);
  if (!augment) return ep;
  Rng rng(derive_seed(rng_seed, {0xA06u}));
  auto jitter = [&](EpisodeItem& item) {
    if (rng.uniform() < 0.5) item.image = hflip(item.image);
    const int oy = int(rng.uniform_int(9)), ox = int(rng.uniform_int(9));
    item.image = pad_crop(item.image, 4, oy, ox);
  };
  for (auto& item : ep.support) jitter(item);
  for (auto& item : ep.query) jitter(item);
  return ep;
}

/// Throws unless the episode satisfies every structural invariant.
inline void check_episode(const Episode& ep, const EpisodeSpec& spec) {
  const int n = spec.n_way;
  check(int(ep.class_map.size()) == n, "episode has ", ep.class_map.size(), " classes, wants ", n);
  check(int(ep.support.size()) == n * spec.k_shot, "support size ", ep.support.size());
  check(int(ep.query.size()) == n * spec.q_query, "query size ", ep.query.size());
  for (std::size_t i = 0; i < ep.class_map.size(); ++i)
    for (std::size_t j = i + 1; j < ep.class_map.size(); ++j)
      check(ep.class_map[i] != ep.class_map[j], "duplicate class in episode");

  std::vector<int> sup_cover(std::size_t(n), 0), qry_cover(std::size_t(n), 0);
  for (const auto& it : ep.support) {
    check(it.local_label >= 0 && it.local_label < n, "support local label out of range");
    check(ep.class_map[std::size_t(it.local_label)] == it.global_label,
          "support label map broken");
    ++sup_cover[std::size_t(it.local_label)];
  }
  for (const auto& it : ep.query) {
    check(it.local_label >= 0 && it.local_label < n, "query local label out of range");
    check(ep.class_map[std::size_t(it.local_label)] == it.global_label, "query label map broken");
    ++qry_cover[std::size_t(it.local_label)];
  }
  for (int l = 0; l < n; ++l) {
    check(sup_cover[std::size_t(l)] == spec.k_shot, "support count for label ", l);
    check(qry_cover[std::size_t(l)] == spec.q_query, "query count for label ", l);
  }
  for (const auto& s : ep.support)
    for (const auto& q : ep.query)
      check(s.global_label != q.global_label || s.source_index != q.source_index,
            "image appears in both support and query");
}

/// Stacks episode images into an NHWC batch.
template <typename T>
Tensor4<T> to_batch(const std::vector<EpisodeItem>& items) {
  check(!items.empty(), "empty batch");
  const int h = items[0].image.h, w = items[0].image.w;
  Tensor4<T> out(int(items.size()), h, w, 3);
  for (std::size_t i = 0; i < items.size(); ++i) {
    check(items[i].image.h == h && items[i].image.w == w, "ragged batch");
    for (std::size_t j = 0; j < items[i].image.px.size(); ++j)
      out.v[i * items[i].image.px.size() + j] = T(items[i].image.px[j]);
  }
  return out;
}

template <typename T>
Tensor4<T> to_batch(const Episode& ep) {
  std::vector<EpisodeItem> all = ep.support;
  all.insert(all.end(), ep.query.begin(), ep.query.end());
  return to_batch<T>(all);
}

inline std::vector<int> local_labels(const std::vector<EpisodeItem>& items) {
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.local_label);
  return out;
}

inline std::vector<int> global_labels(const std::vector<EpisodeItem>& items) {
  std::vector<int> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.global_label);
  return out;
}

}  // namespace bml::data
