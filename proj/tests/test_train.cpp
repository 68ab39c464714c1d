// Trainer: learning-rate schedule, optimizer semantics, per-mode branch
// gating, checkpointing and bitwise resume.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bml/data/synthetic.hpp"
#include "bml/eval/evaluator.hpp"
#include "bml/train/trainer.hpp"

namespace {

using bml::Error;
using bml::data::DatasetBundle;
using bml::data::Episode;
using bml::data::SyntheticSpec;
using bml::losses::DivergenceError;
using bml::losses::LossReport;
using bml::train::LrSchedule;
using bml::train::TrainConfig;
using bml::train::Trainer;
using bml::train::TrainMode;
using bml::train::lr_at;

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("bml_train_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string str() const { return path.string(); }
};

DatasetBundle tiny_bundle() {
  SyntheticSpec s;
  s.classes = 4;
  s.per = 12;
  s.size = 16;
  s.seed = 11;
  s.val_classes = 4;
  s.novel_classes = 4;
  return bml::data::synthetic_bundle(s);
}

TrainConfig tiny_config() {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.lr_schedule = {{0, 0.05}, {2, 0.01}};
  cfg.steps_per_epoch = 2;
  cfg.train_spec = {3, 1, 3};
  cfg.val_spec = {3, 2, 3};
  cfg.val_episodes = 4;
  cfg.backbone.block_channels = {8, 16, 32, 32};
  cfg.backbone.input_size = 16;
  cfg.backbone.shared_depth = 3;
  cfg.seed = 5;
  return cfg;
}

Episode tiny_episode(const DatasetBundle& bundle, const TrainConfig& cfg, std::uint64_t seed) {
  return bml::data::sample_training_batch(bundle.base, cfg.train_spec, seed, cfg.augment);
}

// ---------------------------------------------------------------------------
// learning-rate schedule
// ---------------------------------------------------------------------------

TEST(LrSchedule, DefaultMilestones) {
  TrainConfig cfg;  // stock 100-epoch schedule
  EXPECT_DOUBLE_EQ(lr_at(cfg.lr_schedule, 0), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(cfg.lr_schedule, 49), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(cfg.lr_schedule, 50), 6e-3);
  EXPECT_DOUBLE_EQ(lr_at(cfg.lr_schedule, 69), 6e-3);
  EXPECT_DOUBLE_EQ(lr_at(cfg.lr_schedule, 70), 1.2e-4);
  EXPECT_DOUBLE_EQ(lr_at(cfg.lr_schedule, 99), 1.2e-4);
}

TEST(LrSchedule, StepDecayEveryFortyEpochs) {
  // 150-epoch run decaying x0.1 at epochs 40/80/120
  LrSchedule s{{0, 0.1}, {40, 0.01}, {80, 1e-3}, {120, 1e-4}};
  EXPECT_DOUBLE_EQ(lr_at(s, 39), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(s, 40), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(s, 79), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(s, 80), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(s, 119), 1e-3);
  EXPECT_DOUBLE_EQ(lr_at(s, 149), 1e-4);
  // queries past the last milestone keep the final rate
  EXPECT_DOUBLE_EQ(lr_at(s, 500), 1e-4);
}

TEST(LrSchedule, RejectsMalformedSchedules) {
  TrainConfig cfg = tiny_config();
  cfg.lr_schedule = {{1, 0.1}};  // must start at epoch 0
  EXPECT_THROW(cfg.validate(), Error);
  cfg.lr_schedule = {{0, 0.1}, {10, 0.01}, {10, 1e-3}};  // not strictly increasing
  EXPECT_THROW(cfg.validate(), Error);
  cfg.lr_schedule = {{0, 0.1}, {10, -0.01}};  // negative rate
  EXPECT_THROW(cfg.validate(), Error);
  cfg.lr_schedule = {{0, 0.1}, {10, 0.01}};
  EXPECT_NO_THROW(cfg.validate());
}

// ---------------------------------------------------------------------------
// config serialization
// ---------------------------------------------------------------------------

TEST(TrainConfigJson, RoundTripPreservesHash) {
  TrainConfig cfg = tiny_config();
  cfg.mode = TrainMode::baseline_local;
  cfg.weights.gamma = 0.25;
  cfg.elastic.alpha2 = 0.3;
  nlohmann::json j = cfg;
  TrainConfig back = j.get<TrainConfig>();
  EXPECT_EQ(bml::train::config_hash(cfg), bml::train::config_hash(back));
  EXPECT_EQ(back.mode, TrainMode::baseline_local);
  EXPECT_EQ(back.lr_schedule, cfg.lr_schedule);
  EXPECT_EQ(back.backbone.block_channels, cfg.backbone.block_channels);
}

TEST(TrainConfigJson, HashDistinguishesConfigs) {
  TrainConfig a = tiny_config();
  TrainConfig b = a;
  b.weights.gamma = 0.0;
  EXPECT_NE(bml::train::config_hash(a), bml::train::config_hash(b));
  TrainConfig c = a;
  c.seed += 1;
  EXPECT_NE(bml::train::config_hash(a), bml::train::config_hash(c));
}

// ---------------------------------------------------------------------------
// optimizer semantics
// ---------------------------------------------------------------------------

TEST(Optimizer, ZeroWeightsStepIsPureWeightDecay) {
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.weights = {0.0, 0.0, 0.0};
  cfg.weight_decay = 1e-2;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  auto before = t.named_parameters();

  Episode ep = tiny_episode(bundle, cfg, 99);
  t.train_step(ep, /*epoch=*/0, /*step=*/0);

  const float lr = 0.05f, wd = 1e-2f;
  auto after = t.named_parameters();
  ASSERT_EQ(before.size(), after.size());
  for (size_t p = 0; p < before.size(); ++p) {
    ASSERT_EQ(before[p].first, after[p].first);
    for (size_t i = 0; i < before[p].second.size(); ++i) {
      const float prev = before[p].second[i];
      // v = mu*0 + (0 + wd*p); p' = p - lr*v, evaluated in the same order
      const float expect = prev - lr * (wd * prev);
      ASSERT_EQ(after[p].second[i], expect)
          << before[p].first << "[" << i << "]";
    }
  }
}

TEST(Optimizer, ZeroWeightsZeroDecayFreezesParameters) {
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.weights = {0.0, 0.0, 0.0};
  cfg.weight_decay = 0.0;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  auto before = t.parameter_snapshot();
  Episode ep = tiny_episode(bundle, cfg, 99);
  t.train_step(ep, 0, 0);
  t.train_step(ep, 1, 0);
  EXPECT_EQ(t.parameter_snapshot(), before);
}

TEST(Optimizer, MomentumRecurrenceMatchesHandComputation) {
  // with zero loss weights the decay term is the entire gradient, which makes
  // two update steps exactly predictable:
  //   v1 = wd*p0;        p1 = p0 - lr*v1
  //   v2 = mu*v1 + wd*p1; p2 = p1 - lr*v2
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.weights = {0.0, 0.0, 0.0};
  cfg.momentum = 0.9;
  cfg.weight_decay = 1e-2;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  auto p0 = t.named_parameters();

  Episode ep = tiny_episode(bundle, cfg, 99);
  t.train_step(ep, 0, 0);
  t.train_step(ep, 0, 1);
  auto p2 = t.named_parameters();

  const float lr = 0.05f, wd = 1e-2f, mu = 0.9f;
  ASSERT_EQ(p0.size(), p2.size());
  for (size_t p = 0; p < p0.size(); ++p) {
    for (size_t i = 0; i < p0[p].second.size(); ++i) {
      float v = wd * p0[p].second[i];
      float x = p0[p].second[i] - lr * v;
      v = mu * v + wd * x;
      x = x - lr * v;
      ASSERT_EQ(p2[p].second[i], x) << p0[p].first << "[" << i << "]";
    }
  }
}

// ---------------------------------------------------------------------------
// mode gating
// ---------------------------------------------------------------------------

TEST(Modes, GlobalBaselineLeavesLocalHeadUntouched) {
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.mode = TrainMode::baseline_global;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  auto before = t.named_parameters();
  Episode ep = tiny_episode(bundle, cfg, 42);
  t.train_step(ep, 0, 0);
  t.train_step(ep, 0, 1);

  // local-head gradients are identically zero after a step
  t.net().for_each_param([&](const std::string& name, std::vector<float>&,
                             std::vector<float>& g) {
    if (name.rfind("head_l", 0) == 0)
      for (float v : g) ASSERT_EQ(v, 0.0f) << name;
  });

  auto after = t.named_parameters();
  bool trunk_moved = false, global_moved = false;
  for (size_t p = 0; p < before.size(); ++p) {
    const std::string& name = before[p].first;
    const bool same = before[p].second == after[p].second;
    if (name.rfind("head_l", 0) == 0) {
      EXPECT_TRUE(same) << name << " should stay at initialization";
    } else if (name.rfind("head_g", 0) == 0 && !same) {
      global_moved = true;
    } else if (name.rfind("trunk", 0) == 0 && !same) {
      trunk_moved = true;
    }
  }
  EXPECT_TRUE(trunk_moved);
  EXPECT_TRUE(global_moved);
}

TEST(Modes, LocalBaselineLeavesGlobalHeadAndClassifierUntouched) {
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.mode = TrainMode::baseline_local;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  auto before = t.named_parameters();
  Episode ep = tiny_episode(bundle, cfg, 42);
  t.train_step(ep, 0, 0);

  auto after = t.named_parameters();
  bool local_moved = false;
  for (size_t p = 0; p < before.size(); ++p) {
    const std::string& name = before[p].first;
    const bool same = before[p].second == after[p].second;
    if (name.rfind("head_g", 0) == 0 || name.rfind("classifier", 0) == 0)
      EXPECT_TRUE(same) << name << " should stay at initialization";
    else if (name.rfind("head_l", 0) == 0 && !same)
      local_moved = true;
  }
  EXPECT_TRUE(local_moved);
}

TEST(Modes, UnsharedTrunkWithoutMutualTrainsBranchesIndependently) {
  // with no shared blocks and gamma=0, the global branch's trajectory cannot
  // depend on the local loss weight
  DatasetBundle bundle = tiny_bundle();
  TrainConfig base = tiny_config();
  base.backbone.shared_depth = 0;
  base.weights = {4.0, 2.0, 0.0};

  TrainConfig alt = base;
  alt.weights.beta = 7.0;  // only the local loss scale differs

  Trainer<float> a = Trainer<float>::create(base, bundle);
  Trainer<float> b = Trainer<float>::create(alt, bundle);
  for (int step = 0; step < 3; ++step) {
    Episode ep = tiny_episode(bundle, base, 7 + std::uint64_t(step));
    a.train_step(ep, 0, step);
    b.train_step(ep, 0, step);
  }

  auto pa = a.named_parameters();
  auto pb = b.named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool local_differs = false;
  for (size_t p = 0; p < pa.size(); ++p) {
    const std::string& name = pa[p].first;
    if (name.rfind("head_g", 0) == 0 || name.rfind("classifier", 0) == 0) {
      EXPECT_EQ(pa[p].second, pb[p].second) << name << " must match bitwise";
    } else if (name.rfind("head_l", 0) == 0 && pa[p].second != pb[p].second) {
      local_differs = true;
    }
  }
  EXPECT_TRUE(local_differs);
}

// ---------------------------------------------------------------------------
// elastic schedule inside the loop
// ---------------------------------------------------------------------------

TEST(ElasticSchedule, MeanPushGrowsWithEpochOnFrozenWeights) {
  // zero loss weights and zero decay freeze the parameters, so on a fixed
  // batch the only moving part of the elastic term is the epoch ramp
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 6;
  cfg.weights = {0.0, 0.0, 0.0};
  cfg.weight_decay = 0.0;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  Episode ep = tiny_episode(bundle, cfg, 123);

  double prev = -1.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    LossReport r = t.train_step(ep, epoch, 0);
    EXPECT_GT(r.mean_d_el, prev) << "epoch " << epoch;
    prev = r.mean_d_el;
  }
}

TEST(ElasticSchedule, DisabledElasticReportsZeroPush) {
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.elastic.enabled = false;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  Episode ep = tiny_episode(bundle, cfg, 123);
  LossReport r = t.train_step(ep, 3, 0);
  EXPECT_EQ(r.mean_d_el, 0.0);
}

// ---------------------------------------------------------------------------
// steps per epoch
// ---------------------------------------------------------------------------

TEST(StepsPerEpoch, DerivedFromDatasetSizeWhenUnset) {
  DatasetBundle bundle = tiny_bundle();  // 4 classes x 12 images = 48
  TrainConfig cfg = tiny_config();
  cfg.steps_per_epoch = 0;
  cfg.train_spec = {3, 1, 3};  // 12 images per episode -> ceil(48/12) = 4
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  EXPECT_EQ(t.steps_per_epoch(), 4);

  cfg.train_spec = {4, 1, 4};  // 20 images per episode -> ceil(48/20) = 3
  Trainer<float> t2 = Trainer<float>::create(cfg, bundle);
  EXPECT_EQ(t2.steps_per_epoch(), 3);

  cfg.steps_per_epoch = 7;  // explicit override wins
  Trainer<float> t3 = Trainer<float>::create(cfg, bundle);
  EXPECT_EQ(t3.steps_per_epoch(), 7);
}

// ---------------------------------------------------------------------------
// divergence handling
// ---------------------------------------------------------------------------

TEST(Divergence, PoisonedWeightRaisesWithReport) {
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  t.net().for_each_param([&](const std::string& name, std::vector<float>& p,
                             std::vector<float>&) {
    if (name == "trunk0.conv1.w") p[0] = std::numeric_limits<float>::quiet_NaN();
  });
  Episode ep = tiny_episode(bundle, cfg, 1);
  try {
    t.train_step(ep, 0, 0);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_FALSE(std::isfinite(e.report.total_loss));
  }
}

TEST(Divergence, TrainLoopLogsLastReportBeforeRethrow) {
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 1;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  t.net().for_each_param([&](const std::string& name, std::vector<float>& p,
                             std::vector<float>&) {
    if (name == "trunk0.conv1.w") p[0] = std::numeric_limits<float>::quiet_NaN();
  });
  std::vector<nlohmann::json> log;
  t.set_log_sink([&](const nlohmann::json& j) { log.push_back(j); });
  EXPECT_THROW(t.train(), DivergenceError);
  ASSERT_FALSE(log.empty());
  const nlohmann::json& last = log.back();
  EXPECT_EQ(last.at("event"), "step");
  EXPECT_FALSE(std::isfinite(last.at("total").get<double>()));
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

TEST(Checkpoint, SaveLoadRoundTrip) {
  TempDir dir;
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  Episode ep = tiny_episode(bundle, cfg, 3);
  t.train_step(ep, 0, 0);
  const std::string path = dir.str() + "/a.ckpt";
  t.save(path);

  auto loaded = bml::train::load_checkpoint<float>(path);
  EXPECT_EQ(loaded.meta.version, bml::train::kCheckpointVersion);
  EXPECT_EQ(loaded.meta.scalar, "f32");
  EXPECT_EQ(loaded.meta.config_hash, bml::train::config_hash(cfg));
  EXPECT_TRUE(loaded.tensors.count("param:classifier.w"));
  EXPECT_TRUE(loaded.tensors.count("buffer:trunk0.bn1.running_mean"));

  Trainer<float> r = Trainer<float>::resume(path, bundle, cfg);
  EXPECT_EQ(r.parameter_snapshot(), t.parameter_snapshot());
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  TempDir dir;
  const std::string garbage = dir.str() + "/bad.ckpt";
  {
    std::ofstream out(garbage, std::ios::binary);
    out << "certainly not a checkpoint";
  }
  EXPECT_THROW(bml::train::load_checkpoint<float>(garbage), Error);

  // truncated real checkpoint
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  const std::string good = dir.str() + "/good.ckpt";
  t.save(good);
  std::ifstream in(good, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  const std::string cut = dir.str() + "/cut.ckpt";
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(bytes.data(), std::streamsize(bytes.size() / 2));
  }
  EXPECT_THROW(bml::train::load_checkpoint<float>(cut), Error);

  // wrong scalar width
  EXPECT_THROW(bml::train::load_checkpoint<double>(good), Error);
}

TEST(Checkpoint, ConfigMismatchNeedsForce) {
  TempDir dir;
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  const std::string path = dir.str() + "/a.ckpt";
  t.save(path);

  TrainConfig other = cfg;
  other.lr_schedule = {{0, 0.5}};
  EXPECT_THROW(Trainer<float>::resume(path, bundle, other), Error);
  EXPECT_NO_THROW(Trainer<float>::resume(path, bundle, other, /*force_config=*/true));
}

TEST(Checkpoint, ResumeContinuesBitwise) {
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();  // 4 epochs, 2 steps each

  std::vector<nlohmann::json> log_full;
  Trainer<float> full = Trainer<float>::create(cfg, bundle);
  full.set_log_sink([&](const nlohmann::json& j) { log_full.push_back(j); });
  full.train();

  TempDir dir;
  std::vector<nlohmann::json> log_staged;
  Trainer<float> first = Trainer<float>::create(cfg, bundle);
  first.set_log_sink([&](const nlohmann::json& j) { log_staged.push_back(j); });
  first.train(dir.str(), /*until_epoch=*/2);
  EXPECT_EQ(first.epoch(), 2);

  Trainer<float> second = Trainer<float>::resume(dir.str() + "/last.ckpt", bundle, cfg);
  EXPECT_EQ(second.epoch(), 2);
  second.set_log_sink([&](const nlohmann::json& j) { log_staged.push_back(j); });
  second.train();

  // the interrupted run must replay the identical step stream...
  ASSERT_EQ(log_full.size(), log_staged.size());
  for (size_t i = 0; i < log_full.size(); ++i)
    EXPECT_EQ(log_full[i], log_staged[i]) << "log line " << i;

  // ...end on identical weights...
  EXPECT_EQ(full.parameter_snapshot(), second.parameter_snapshot());
  EXPECT_EQ(full.best_epoch(), second.best_epoch());
  EXPECT_DOUBLE_EQ(full.best_val(), second.best_val());

  // ...and produce identical evaluation artifacts
  bml::eval::MetaTestOptions opts;
  opts.n_episodes = 6;
  opts.seed = 77;
  auto ra = bml::eval::meta_test(bml::eval::make_embedder(full.net()), bundle.novel,
                                 cfg.val_spec, opts);
  auto rb = bml::eval::meta_test(bml::eval::make_embedder(second.net()), bundle.novel,
                                 cfg.val_spec, opts);
  EXPECT_EQ(ra.to_json().dump(), rb.to_json().dump());
}

// ---------------------------------------------------------------------------
// end-to-end smoke: the loop actually learns on an easy corpus
// ---------------------------------------------------------------------------

TEST(TrainLoop, LossDecreasesOnTinyCorpus) {
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 3;
  cfg.steps_per_epoch = 4;
  std::vector<double> totals;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  t.set_log_sink([&](const nlohmann::json& j) {
    if (j.at("event") == "step") totals.push_back(j.at("total").get<double>());
  });
  t.train();
  ASSERT_EQ(totals.size(), 12u);
  const double first_epoch = (totals[0] + totals[1] + totals[2] + totals[3]) / 4;
  const double last_epoch = (totals[8] + totals[9] + totals[10] + totals[11]) / 4;
  EXPECT_LT(last_epoch, first_epoch);
  EXPECT_GT(t.best_val(), 0.0);  // validation ran and recorded something
}

TEST(TrainLoop, BestWeightsRestoreMatchesBestEpoch) {
  TempDir dir;
  DatasetBundle bundle = tiny_bundle();
  TrainConfig cfg = tiny_config();
  cfg.epochs = 2;
  Trainer<float> t = Trainer<float>::create(cfg, bundle);
  t.train(dir.str());
  ASSERT_GE(t.best_epoch(), 0);
  EXPECT_TRUE(fs::exists(dir.path / "last.ckpt"));
  EXPECT_TRUE(fs::exists(dir.path / "best.ckpt"));

  auto best = bml::train::load_checkpoint<float>(dir.str() + "/best.ckpt");
  EXPECT_EQ(best.meta.epoch, t.best_epoch() + 1);
  t.load_best_weights();
  auto snap = t.parameter_snapshot();
  size_t i = 0;
  bool all_match = true;
  t.net().for_each_param([&](const std::string& name, std::vector<float>&,
                             std::vector<float>&) {
    if (best.tensors.at("param:" + name) != snap[i++]) all_match = false;
  });
  EXPECT_TRUE(all_match);
}

}  // namespace
