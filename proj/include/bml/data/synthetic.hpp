#pragma once

// Deterministic parametric texture datasets. Each class is a texture family
// instance (gratings, blobs, checkers, rings); classes drawn from the same
// family differ only in level parameters, so the task is learnable but not
// trivially saturated. Per-image jitter (phase, position, amplitude,
// brightness) plus pixel noise supplies intra-class variation.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "bml/core/common.hpp"
#include "bml/core/rng.hpp"
#include "bml/data/dataset.hpp"

namespace bml::data {

struct SyntheticSpec {
  int classes = 8, per = 50, size = 32;
  std::uint64_t seed = 7;
  int val_classes = 4, novel_classes = 8;
  int per_val = -1, per_novel = -1;  // -1: same as per
  float noise = 0.12f;

  void validate() const {
    check(classes >= 2, "synthetic dataset needs at least 2 base classes, got ", classes);
    check(val_classes >= 2 && novel_classes >= 2, "val/novel splits need at least 2 classes");
    check(per >= 1 && size >= 8, "per-class count and size must be sensible");
    check(noise >= 0.f, "noise must be >= 0");
  }
};

/// Accepts `synthetic://classes=8,per=50,size=32,seed=7` plus optional
/// val=, novel=, per_val=, per_novel=, noise= keys.
inline SyntheticSpec parse_synthetic_uri(const std::string& uri) {
  const std::string prefix = "synthetic://";
  check(uri.rfind(prefix, 0) == 0, "not a synthetic dataset uri: ", uri);
  SyntheticSpec spec;
  std::string rest = uri.substr(prefix.size());
  std::size_t pos = 0;
  while (pos < rest.size()) {
    std::size_t comma = rest.find(',', pos);
    if (comma == std::string::npos) comma = rest.size();
    const std::string kv = rest.substr(pos, comma - pos);
    pos = comma + 1;
    if (kv.empty()) continue;
    const std::size_t eq = kv.find('=');
    check(eq != std::string::npos, "bad synthetic uri fragment: ", kv);
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    try {
      if (key == "classes") spec.classes = std::stoi(val);
      else if (key == "per") spec.per = std::stoi(val);
      else if (key == "size") spec.size = std::stoi(val);
      else if (key == "seed") spec.seed = std::stoull(val);
      else if (key == "val") spec.val_classes = std::stoi(val);
      else if (key == "novel") spec.novel_classes = std::stoi(val);
      else if (key == "per_val") spec.per_val = std::stoi(val);
      else if (key == "per_novel") spec.per_novel = std::stoi(val);
      else if (key == "noise") spec.noise = std::stof(val);
      else fail("unknown synthetic uri key: ", key);
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail("bad value for synthetic uri key ", key, ": ", val);
    }
  }
  spec.validate();
  return spec;
}

namespace detail {

struct ClassStyle {
  int family = 0;       // 0 grating, 1 blobs, 2 checker, 3 rings
  float freq = 3.f;     // gratings / rings
  float theta = 0.f;    // grating orientation
  float cell = 5.f;     // checker cell size (pixels at 32; scaled by size/32)
  float cx = 0.5f, cy = 0.5f;  // ring center / blob anchor (relative)
  std::vector<float> blob_x, blob_y, blob_r;
  float tint[3] = {1.f, 1.f, 1.f};
};

inline ClassStyle make_style(std::uint64_t seed, int class_idx) {
  Rng rng(derive_seed(seed, {0xC1A5u, std::uint64_t(class_idx)}));
  ClassStyle s;
  s.family = class_idx % 4;
  const int level = class_idx / 4;
  // level shifts keep same-family classes adjacent in parameter space
  s.freq = 2.2f + 1.6f * level + float(rng.uniform(-0.15, 0.15));
  s.theta = float(rng.uniform(0.0, 3.14159265));
  s.cell = 4.5f + 2.2f * level + float(rng.uniform(-0.3, 0.3));
  s.cx = 0.35f + 0.3f * float(rng.uniform());
  s.cy = 0.35f + 0.3f * float(rng.uniform());
  const int blobs = 2 + level % 3;
  for (int b = 0; b < blobs; ++b) {
    s.blob_x.push_back(0.15f + 0.7f * float(rng.uniform()));
    s.blob_y.push_back(0.15f + 0.7f * float(rng.uniform()));
    s.blob_r.push_back(0.08f + 0.08f * float(rng.uniform()));
  }
  for (float& t : s.tint) t = 0.55f + 0.45f * float(rng.uniform());
  return s;
}

inline Image render(const ClassStyle& s, int size, float noise, Rng& rng) {
  const float phase = float(rng.uniform(0.0, 6.28318530718));
  const float theta = s.theta + float(rng.uniform(-0.12, 0.12));
  const float jx = float(rng.uniform(-2.0, 2.0)) / 32.f;  // relative jitter
  const float jy = float(rng.uniform(-2.0, 2.0)) / 32.f;
  const float amp = 0.32f + 0.12f * float(rng.uniform());
  const float bright = 0.8f + 0.4f * float(rng.uniform());
  const float cell = s.cell * float(size) / 32.f;

  Image img(size, size);
  const float ct = std::cos(theta), st = std::sin(theta);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const float rx = float(x) / size, ry = float(y) / size;
      float v = 0.f;
      switch (s.family) {
        case 0:
          v = std::sin(6.2831853f * s.freq * (rx * ct + ry * st) + phase);
          break;
        case 1: {
          float acc = 0.f;
          for (std::size_t b = 0; b < s.blob_x.size(); ++b) {
            const float dx = rx - (s.blob_x[b] + jx), dy = ry - (s.blob_y[b] + jy);
            acc += std::exp(-(dx * dx + dy * dy) / (2.f * s.blob_r[b] * s.blob_r[b]));
          }
          v = std::min(acc, 1.f) * 2.f - 1.f;
          break;
        }
        case 2: {
          const int px = int(std::floor((float(x) + jx * 32.f) / cell));
          const int py = int(std::floor((float(y) + jy * 32.f) / cell));
          v = ((px + py) % 2 + 2) % 2 == 0 ? 1.f : -1.f;
          break;
        }
        case 3: {
          const float dx = rx - (s.cx + jx), dy = ry - (s.cy + jy);
          v = std::sin(6.2831853f * s.freq * std::sqrt(dx * dx + dy * dy) * 2.f + phase);
          break;
        }
        default:
          break;
      }
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = (0.5f + amp * s.tint[c] * v) * bright + noise * float(rng.normal());
    }
  clamp01(img);
  return img;
}

}  // namespace detail

inline DatasetSplit generate_synthetic(int num_classes, int images_per_class, int image_size,
                                       std::uint64_t seed, const std::string& class_prefix = "c",
                                       float noise = 0.12f) {
  check(num_classes >= 2, "synthetic split needs >= 2 classes, got ", num_classes);
  check(images_per_class >= 1, "need at least one image per class");
  DatasetSplit split;
  split.image_size = image_size;
  for (int cl = 0; cl < num_classes; ++cl) {
    const detail::ClassStyle style = detail::make_style(seed, cl);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%s%02d", class_prefix.c_str(), cl);
    split.classes.push_back(buf);
    std::vector<ImageSource> srcs;
    for (int i = 0; i < images_per_class; ++i) {
      Rng rng(derive_seed(seed, {std::uint64_t(cl), std::uint64_t(i) + 1}));
      srcs.push_back({"", std::make_shared<Image>(detail::render(style, image_size, noise, rng))});
    }
    split.images.push_back(std::move(srcs));
  }
  return split;
}

/// Three disjoint splits; val and novel draw fresh class styles from seeds
/// derived off the base seed.
inline DatasetBundle synthetic_bundle(const SyntheticSpec& spec) {
  spec.validate();
  const int per_val = spec.per_val > 0 ? spec.per_val : spec.per;
  const int per_novel = spec.per_novel > 0 ? spec.per_novel : spec.per;
  DatasetBundle b;
  b.base = generate_synthetic(spec.classes, spec.per, spec.size, spec.seed, "c", spec.noise);
  b.base.name = "base";
  b.base.role = SplitRole::base;
  b.val = generate_synthetic(spec.val_classes, per_val, spec.size,
                             derive_seed(spec.seed, {0x7A1u}), "v", spec.noise);
  b.val.name = "val";
  b.val.role = SplitRole::val;
  b.novel = generate_synthetic(spec.novel_classes, per_novel, spec.size,
                               derive_seed(spec.seed, {0x407EFu}), "n", spec.noise);
  b.novel.name = "novel";
  b.novel.role = SplitRole::novel;
  b.validate();
  return b;
}

/// Label-free control data: every class draws i.i.d. uniform pixels, so no
/// classifier can beat chance in expectation. Used to verify that evaluation
/// accuracy sits at 1/N when there is nothing to learn.
inline DatasetSplit noise_split(int num_classes, int images_per_class, int image_size,
                                std::uint64_t seed) {
  check(num_classes >= 2, "noise split needs >= 2 classes");
  DatasetSplit split;
  split.name = "noise";
  split.role = SplitRole::novel;
  split.image_size = image_size;
  for (int cl = 0; cl < num_classes; ++cl) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "x%02d", cl);
    split.classes.push_back(buf);
    std::vector<ImageSource> srcs;
    for (int i = 0; i < images_per_class; ++i) {
      Rng rng(derive_seed(seed, {std::uint64_t(cl), std::uint64_t(i) + 1, 0xF00Du}));
      auto img = std::make_shared<Image>(image_size, image_size);
      for (float& v : img->px) v = float(rng.uniform());
      srcs.push_back({"", std::move(img)});
    }
    split.images.push_back(std::move(srcs));
  }
  return split;
}

}  // namespace bml::data
