#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "bml/data/dataset.hpp"
#include "bml/data/degrade.hpp"
#include "bml/data/episode.hpp"
#include "bml/data/image.hpp"
#include "bml/data/image_io.hpp"
#include "bml/data/synthetic.hpp"

using namespace bml;
using namespace bml::data;
namespace fs = std::filesystem;

namespace {

Image test_pattern(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (float& v : img.px) v = float(rng.uniform());
  return img;
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("bml_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// image ops
// ---------------------------------------------------------------------------

TEST(ImageOps, ResizeSameSizeIsIdentity) {
  Image img = test_pattern(8, 8, 1);
  Image out = resize_bilinear(img, 8, 8);
  for (std::size_t i = 0; i < img.px.size(); ++i) EXPECT_EQ(out.px[i], img.px[i]);
}

TEST(ImageOps, ResizePreservesConstant) {
  Image img(6, 6);
  for (float& v : img.px) v = 0.4f;
  Image out = resize_bilinear(img, 13, 5);
  EXPECT_EQ(out.h, 13);
  EXPECT_EQ(out.w, 5);
  for (float v : out.px) EXPECT_NEAR(v, 0.4f, 1e-6f);
}

TEST(ImageOps, HflipTwiceIsIdentity) {
  Image img = test_pattern(5, 7, 2);
  Image out = hflip(hflip(img));
  for (std::size_t i = 0; i < img.px.size(); ++i) EXPECT_EQ(out.px[i], img.px[i]);
  Image once = hflip(img);
  EXPECT_EQ(once.at(2, 0, 1), img.at(2, 6, 1));
}

TEST(ImageOps, CenteredPadCropIsIdentity) {
  Image img = test_pattern(6, 6, 3);
  Image out = pad_crop(img, 4, 4, 4);
  for (std::size_t i = 0; i < img.px.size(); ++i) EXPECT_EQ(out.px[i], img.px[i]);
  // a shifted crop pulls zeros in from the padding
  Image shifted = pad_crop(img, 4, 0, 0);
  EXPECT_EQ(shifted.at(0, 0, 0), 0.f);
  EXPECT_EQ(shifted.at(5, 5, 0), img.at(1, 1, 0));
}

TEST(ImageOps, BlurZeroSigmaIsIdentity) {
  Image img = test_pattern(9, 9, 4);
  Image out = gaussian_blur(img, 0.f);
  for (std::size_t i = 0; i < img.px.size(); ++i) EXPECT_EQ(out.px[i], img.px[i]);
}

TEST(ImageOps, BlurPreservesConstantAndSmooths) {
  Image flat(8, 8);
  for (float& v : flat.px) v = 0.6f;
  Image out = gaussian_blur(flat, 1.5f);
  for (float v : out.px) EXPECT_NEAR(v, 0.6f, 1e-5f);

  // blur shrinks the dynamic range of a noisy image
  Image noisy = test_pattern(16, 16, 5);
  Image smooth = gaussian_blur(noisy, 1.5f);
  auto range = [](const Image& im) {
    float lo = 1e9f, hi = -1e9f;
    for (float v : im.px) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    return hi - lo;
  };
  EXPECT_LT(range(smooth), range(noisy));
}

// ---------------------------------------------------------------------------
// image io
// ---------------------------------------------------------------------------

TEST(ImageIo, PngRoundTripIsExactAtEightBits) {
  TempDir tmp;
  Image img(5, 4);
  for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = float(i % 256) / 255.f;
  const std::string path = (tmp.path / "x.png").string();
  write_png(path, img);
  Image back = read_image(path);
  ASSERT_EQ(back.h, 5);
  ASSERT_EQ(back.w, 4);
  for (std::size_t i = 0; i < img.px.size(); ++i) EXPECT_NEAR(back.px[i], img.px[i], 1e-6f);
}

TEST(ImageIo, JpegRoundTripIsClose) {
  TempDir tmp;
  Image img(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = 0.25f + 0.5f * (c == 1);
  const std::string path = (tmp.path / "x.jpg").string();
  write_jpeg(path, img, 95);
  Image back = read_image(path);
  ASSERT_EQ(back.h, 16);
  for (std::size_t i = 0; i < img.px.size(); ++i) EXPECT_NEAR(back.px[i], img.px[i], 0.08f);
}

TEST(ImageIo, MissingFileThrows) {
  EXPECT_THROW(read_image("/nonexistent/path/x.png"), Error);
  EXPECT_THROW(read_image("/tmp/whatever.bmp"), Error);
}

// ---------------------------------------------------------------------------
// load_dataset
// ---------------------------------------------------------------------------

namespace {

void write_class_dir(const fs::path& dir, int n_images, uint64_t seed) {
  fs::create_directories(dir);
  for (int i = 0; i < n_images; ++i)
    write_png((dir / ("img" + std::to_string(i) + ".png")).string(),
              test_pattern(8, 8, seed + uint64_t(i)));
}

}  // namespace

TEST(LoadDataset, SplitSizedLayoutLoads) {
  TempDir tmp;
  // a benchmark-shaped class partition: 60 base / 16 val / 20 novel
  for (int i = 0; i < 60; ++i)
    write_class_dir(tmp.path / "base" / ("b" + std::to_string(i)), 1, uint64_t(i));
  for (int i = 0; i < 16; ++i)
    write_class_dir(tmp.path / "val" / ("v" + std::to_string(i)), 1, uint64_t(100 + i));
  for (int i = 0; i < 20; ++i)
    write_class_dir(tmp.path / "novel" / ("n" + std::to_string(i)), 1, uint64_t(200 + i));
  DatasetBundle b = load_dataset(tmp.path.string(), "", 8);
  EXPECT_EQ(b.base.n_classes(), 60);
  EXPECT_EQ(b.val.n_classes(), 16);
  EXPECT_EQ(b.novel.n_classes(), 20);
  // lexicographic class order
  EXPECT_LT(b.base.classes[0], b.base.classes[1]);
}

TEST(LoadDataset, SingletonClassIsValid) {
  TempDir tmp;
  write_class_dir(tmp.path / "base" / "only", 1, 1);
  write_class_dir(tmp.path / "val" / "v0", 1, 2);
  write_class_dir(tmp.path / "novel" / "n0", 1, 3);
  DatasetBundle b = load_dataset(tmp.path.string(), "", 8);
  EXPECT_EQ(b.base.n_classes(), 1);
  EXPECT_EQ(b.base.images[0].size(), 1u);
  Image img = b.base.images[0][0].load(8);
  EXPECT_EQ(img.h, 8);
}

TEST(LoadDataset, OverlappingClassThrows) {
  TempDir tmp;
  write_class_dir(tmp.path / "base" / "dog", 1, 1);
  write_class_dir(tmp.path / "base" / "cat", 1, 2);
  write_class_dir(tmp.path / "val" / "bird", 1, 3);
  write_class_dir(tmp.path / "novel" / "dog", 1, 4);
  EXPECT_THROW(load_dataset(tmp.path.string(), "", 8), Error);
}

TEST(LoadDataset, MissingSplitThrows) {
  TempDir tmp;
  write_class_dir(tmp.path / "base" / "a", 1, 1);
  EXPECT_THROW(load_dataset(tmp.path.string(), "", 8), Error);
}

TEST(LoadDataset, EmptyClassThrows) {
  TempDir tmp;
  write_class_dir(tmp.path / "base" / "a", 1, 1);
  fs::create_directories(tmp.path / "base" / "empty");
  write_class_dir(tmp.path / "val" / "v", 1, 2);
  write_class_dir(tmp.path / "novel" / "n", 1, 3);
  EXPECT_THROW(load_dataset(tmp.path.string(), "", 8), Error);
}

TEST(LoadDataset, ManifestMismatchThrows) {
  TempDir tmp;
  write_class_dir(tmp.path / "base" / "a", 1, 1);
  write_class_dir(tmp.path / "val" / "v", 1, 2);
  write_class_dir(tmp.path / "novel" / "n", 1, 3);
  const std::string manifest = (tmp.path / "manifest.json").string();
  {
    std::ofstream out(manifest);
    out << R"({"a": "val", "v": "val", "n": "novel"})";
  }
  EXPECT_THROW(load_dataset(tmp.path.string(), manifest, 8), Error);
  {
    std::ofstream out(manifest);
    out << R"({"a": "base", "v": "val", "n": "novel"})";
  }
  DatasetBundle b = load_dataset(tmp.path.string(), manifest, 8);
  EXPECT_EQ(b.base.n_classes(), 1);
}

TEST(LoadDataset, ResizesToRequestedSize) {
  TempDir tmp;
  fs::create_directories(tmp.path / "base" / "a");
  write_png((tmp.path / "base" / "a" / "i.png").string(), test_pattern(4, 4, 9));
  write_class_dir(tmp.path / "val" / "v", 1, 2);
  write_class_dir(tmp.path / "novel" / "n", 1, 3);
  DatasetBundle b = load_dataset(tmp.path.string(), "", 16);
  Image img = b.base.images[0][0].load(b.base.image_size);
  EXPECT_EQ(img.h, 16);
  EXPECT_EQ(img.w, 16);
}

// ---------------------------------------------------------------------------
// synthetic generation
// ---------------------------------------------------------------------------

TEST(Synthetic, CardinalityMatchesRequest) {
  DatasetSplit s = generate_synthetic(8, 50, 32, 7);
  EXPECT_EQ(s.n_classes(), 8);
  EXPECT_EQ(s.n_images(), 400u);
  Image img = s.images[0][0].load(32);
  EXPECT_EQ(img.h, 32);
  for (float v : img.px) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

TEST(Synthetic, DeterministicAcrossCalls) {
  DatasetSplit a = generate_synthetic(4, 5, 16, 11);
  DatasetSplit b = generate_synthetic(4, 5, 16, 11);
  for (int cl = 0; cl < 4; ++cl)
    for (int i = 0; i < 5; ++i) {
      const Image& ia = *a.images[std::size_t(cl)][std::size_t(i)].mem;
      const Image& ib = *b.images[std::size_t(cl)][std::size_t(i)].mem;
      ASSERT_EQ(ia.px, ib.px) << "class " << cl << " image " << i;
    }
  DatasetSplit c = generate_synthetic(4, 5, 16, 12);
  EXPECT_NE(a.images[0][0].mem->px, c.images[0][0].mem->px);
}

TEST(Synthetic, SingleClassRejected) {
  EXPECT_THROW(generate_synthetic(1, 5, 16, 1), Error);
}

TEST(Synthetic, UriParsingAndDefaults) {
  SyntheticSpec spec = parse_synthetic_uri("synthetic://classes=8,per=50,size=32,seed=7");
  EXPECT_EQ(spec.classes, 8);
  EXPECT_EQ(spec.per, 50);
  EXPECT_EQ(spec.size, 32);
  EXPECT_EQ(spec.seed, 7u);
  SyntheticSpec spec2 =
      parse_synthetic_uri("synthetic://classes=6,per=20,size=16,seed=3,val=4,novel=5,noise=0.05");
  EXPECT_EQ(spec2.val_classes, 4);
  EXPECT_EQ(spec2.novel_classes, 5);
  EXPECT_NEAR(spec2.noise, 0.05f, 1e-7f);
  EXPECT_THROW(parse_synthetic_uri("synthetic://bogus=1"), Error);
  EXPECT_THROW(parse_synthetic_uri("file:///x"), Error);
  EXPECT_THROW(parse_synthetic_uri("synthetic://classes=1"), Error);
}

TEST(Synthetic, BundleSplitsAreDisjointAndFresh) {
  SyntheticSpec spec = parse_synthetic_uri("synthetic://classes=4,per=6,size=16,seed=5,val=2,novel=3");
  DatasetBundle b = synthetic_bundle(spec);
  b.validate();  // includes disjointness
  EXPECT_EQ(b.base.n_classes(), 4);
  EXPECT_EQ(b.val.n_classes(), 2);
  EXPECT_EQ(b.novel.n_classes(), 3);
  // novel classes use different styles than base class 0
  EXPECT_NE(b.base.images[0][0].mem->px, b.novel.images[0][0].mem->px);
}

TEST(Synthetic, NoiseSplitCoversRange) {
  DatasetSplit s = noise_split(4, 10, 16, 3);
  EXPECT_EQ(s.n_classes(), 4);
  EXPECT_EQ(s.n_images(), 40u);
  for (float v : s.images[0][0].mem->px) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

// ---------------------------------------------------------------------------
// episodes
// ---------------------------------------------------------------------------

TEST(Episode, CardinalitiesFollowSpec) {
  DatasetSplit split = generate_synthetic(8, 20, 16, 2);
  EpisodeSpec spec{5, 1, 15};
  Episode ep = sample_episode(split, spec, 42);
  EXPECT_EQ(ep.support.size(), 5u);
  EXPECT_EQ(ep.query.size(), 75u);
  check_episode(ep, spec);

  EpisodeSpec five_shot{5, 5, 6};
  Episode ep5 = sample_episode(split, five_shot, 43);
  EXPECT_EQ(ep5.support.size(), 25u);
  std::set<int> classes(ep5.class_map.begin(), ep5.class_map.end());
  EXPECT_EQ(classes.size(), 5u);
  check_episode(ep5, five_shot);
}

TEST(Episode, TooFewClassesThrows) {
  DatasetSplit split = generate_synthetic(16, 8, 16, 2);
  EpisodeSpec spec{20, 1, 2};
  EXPECT_THROW(sample_episode(split, spec, 1), Error);
}

TEST(Episode, TooFewImagesPerClassThrows) {
  DatasetSplit split = generate_synthetic(5, 4, 16, 2);
  EpisodeSpec spec{5, 2, 3};  // needs 5 per class, classes have 4
  EXPECT_THROW(sample_episode(split, spec, 1), Error);
}

TEST(Episode, DeterministicGivenSeed) {
  DatasetSplit split = generate_synthetic(8, 12, 16, 2);
  EpisodeSpec spec{5, 1, 3};
  Episode a = sample_episode(split, spec, 7);
  Episode b = sample_episode(split, spec, 7);
  ASSERT_EQ(a.class_map, b.class_map);
  for (std::size_t i = 0; i < a.support.size(); ++i) {
    EXPECT_EQ(a.support[i].source_index, b.support[i].source_index);
    EXPECT_EQ(a.support[i].image.px, b.support[i].image.px);
  }
}

TEST(Episode, SeedsVaryClassSets) {
  DatasetSplit split = generate_synthetic(8, 12, 16, 2);
  EpisodeSpec spec{5, 1, 3};
  Episode first = sample_episode(split, spec, 0);
  bool any_different = false;
  for (uint64_t s = 1; s <= 100 && !any_different; ++s)
    any_different = sample_episode(split, spec, s).class_map != first.class_map;
  EXPECT_TRUE(any_different);
}

TEST(Episode, RandomSpecsSatisfyInvariants) {
  DatasetSplit split = generate_synthetic(10, 15, 16, 4);
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    EpisodeSpec spec;
    spec.n_way = 2 + int(rng.uniform_int(8));
    spec.k_shot = 1 + int(rng.uniform_int(5));
    spec.q_query = 1 + int(rng.uniform_int(5));
    if (spec.k_shot + spec.q_query > 15) continue;
    Episode ep = sample_episode(split, spec, rng.uniform_int(1u << 30));
    ASSERT_NO_THROW(check_episode(ep, spec)) << "trial " << trial;
  }
}

TEST(Episode, TrainingBatchDefaultSpecCounts) {
  DatasetSplit split = generate_synthetic(20, 10, 16, 5);
  EpisodeSpec spec;  // defaults: 15-way, 1-shot, 6 queries
  Episode ep = sample_training_batch(split, spec, 3, /*augment=*/false);
  EXPECT_EQ(ep.support.size() + ep.query.size(), 105u);
  std::set<int> classes(ep.class_map.begin(), ep.class_map.end());
  EXPECT_EQ(classes.size(), 15u);
  check_episode(ep, spec);
}

TEST(Episode, TrainingBatchTooFewClassesThrows) {
  DatasetSplit split = generate_synthetic(10, 10, 16, 5);
  EpisodeSpec spec;  // 15-way
  EXPECT_THROW(sample_training_batch(split, spec, 1), Error);
}

TEST(Episode, AugmentationPreservesShapeAndDeterminism) {
  DatasetSplit split = generate_synthetic(6, 10, 16, 6);
  EpisodeSpec spec{4, 1, 2};
  Episode a = sample_training_batch(split, spec, 11, true);
  Episode b = sample_training_batch(split, spec, 11, true);
  check_episode(a, spec);
  for (std::size_t i = 0; i < a.query.size(); ++i) {
    ASSERT_EQ(a.query[i].image.h, 16);
    ASSERT_EQ(a.query[i].image.px, b.query[i].image.px);
  }
  // augmentation actually changes pixels for at least one image
  Episode plain = sample_training_batch(split, spec, 11, false);
  bool changed = false;
  for (std::size_t i = 0; i < a.query.size() && !changed; ++i)
    changed = a.query[i].image.px != plain.query[i].image.px;
  EXPECT_TRUE(changed);
}

TEST(Episode, ToBatchStacksImages) {
  DatasetSplit split = generate_synthetic(4, 8, 16, 8);
  EpisodeSpec spec{3, 2, 1};
  Episode ep = sample_episode(split, spec, 21);
  Tensor4<float> batch = to_batch<float>(ep.support);
  EXPECT_EQ(batch.n, 6);
  EXPECT_EQ(batch.h, 16);
  EXPECT_EQ(batch.c, 3);
  EXPECT_EQ(batch.at(0, 3, 2, 1), ep.support[0].image.at(3, 2, 1));
  Tensor4<double> all = to_batch<double>(ep);
  EXPECT_EQ(all.n, 9);
}

// ---------------------------------------------------------------------------
// degradations
// ---------------------------------------------------------------------------

TEST(Degrade, PepperAltersAboutOnePercent) {
  Image img(84, 84);
  for (float& v : img.px) v = 0.5f;
  Degradation d;
  d.kind = DegradationKind::pepper_noise;
  d.ratio = 0.01f;
  Image out = apply_degradation(img, d, 17);
  int altered = 0;
  for (int y = 0; y < 84; ++y)
    for (int x = 0; x < 84; ++x)
      if (out.at(y, x, 0) != 0.5f || out.at(y, x, 1) != 0.5f || out.at(y, x, 2) != 0.5f)
        ++altered;
  const double frac = double(altered) / (84.0 * 84.0);
  EXPECT_GE(frac, 0.005);
  EXPECT_LE(frac, 0.015);
  // altered pixels go to exactly 0 or 1 across all channels
  for (int y = 0; y < 84; ++y)
    for (int x = 0; x < 84; ++x)
      if (out.at(y, x, 0) != 0.5f)
        EXPECT_TRUE((out.at(y, x, 0) == 0.f || out.at(y, x, 0) == 1.f) &&
                    out.at(y, x, 0) == out.at(y, x, 1) && out.at(y, x, 1) == out.at(y, x, 2));
}

TEST(Degrade, BlurZeroSigmaIsIdentity) {
  Image img = test_pattern(12, 12, 31);
  Degradation d;
  d.kind = DegradationKind::gaussian_blur;
  d.sigma_min = d.sigma_max = 0.f;
  Image out = apply_degradation(img, d, 5);
  for (std::size_t i = 0; i < img.px.size(); ++i) EXPECT_NEAR(out.px[i], img.px[i], 1e-6f);
}

TEST(Degrade, JitterZeroBrightnessIsIdentity) {
  Image img = test_pattern(10, 10, 32);
  Degradation d;
  d.kind = DegradationKind::color_jitter;
  d.brightness = 0.f;
  Image out = apply_degradation(img, d, 5);
  for (std::size_t i = 0; i < img.px.size(); ++i) EXPECT_EQ(out.px[i], img.px[i]);
}

TEST(Degrade, ResizeChangesShape) {
  Image img = test_pattern(16, 16, 33);
  Degradation d;
  d.kind = DegradationKind::resize;
  d.target_size = 24;
  Image out = apply_degradation(img, d, 5);
  EXPECT_EQ(out.h, 24);
  EXPECT_EQ(out.w, 24);
}

TEST(Degrade, DeterministicGivenSeedAndBounded) {
  Image img = test_pattern(12, 12, 34);
  for (const Degradation& d : degradation_presets()) {
    if (d.kind == DegradationKind::resize) continue;  // shape change covered above
    Image a = apply_degradation(img, d, 7);
    Image b = apply_degradation(img, d, 7);
    ASSERT_EQ(a.px, b.px) << d.describe();
    for (float v : a.px) {
      ASSERT_GE(v, 0.f);
      ASSERT_LE(v, 1.f);
    }
  }
}

TEST(Degrade, PresetsMatchStockParameters) {
  auto presets = degradation_presets();
  ASSERT_EQ(presets.size(), 4u);
  EXPECT_EQ(presets[0].kind, DegradationKind::resize);
  EXPECT_EQ(presets[0].target_size, 224);
  EXPECT_EQ(presets[1].kind, DegradationKind::gaussian_blur);
  EXPECT_NEAR(presets[1].sigma_min, 0.1f, 1e-7f);
  EXPECT_NEAR(presets[1].sigma_max, 2.f, 1e-7f);
  EXPECT_EQ(presets[2].kind, DegradationKind::pepper_noise);
  EXPECT_NEAR(presets[2].ratio, 0.01f, 1e-9f);
  EXPECT_EQ(presets[3].kind, DegradationKind::color_jitter);
  EXPECT_NEAR(presets[3].brightness, 0.8f, 1e-7f);
}

TEST(Degrade, ParseStringsAndRejectBadParams) {
  Degradation d = parse_degradation("blur:0.5-1.5");
  EXPECT_EQ(d.kind, DegradationKind::gaussian_blur);
  EXPECT_NEAR(d.sigma_min, 0.5f, 1e-7f);
  EXPECT_NEAR(d.sigma_max, 1.5f, 1e-7f);
  d = parse_degradation("pepper:0.02");
  EXPECT_NEAR(d.ratio, 0.02f, 1e-7f);
  d = parse_degradation("resize:64");
  EXPECT_EQ(d.target_size, 64);
  d = parse_degradation("jitter:0.3");
  EXPECT_NEAR(d.brightness, 0.3f, 1e-7f);
  EXPECT_THROW(parse_degradation("pepper:1.5"), Error);
  EXPECT_THROW(parse_degradation("warp:2"), Error);
  Degradation bad;
  bad.kind = DegradationKind::gaussian_blur;
  bad.sigma_min = 2.f;
  bad.sigma_max = 1.f;
  EXPECT_THROW(bad.validate(), Error);
}
