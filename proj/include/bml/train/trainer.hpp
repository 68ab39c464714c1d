#pragma once

// Joint training of the dual-view network: one momentum-SGD optimizer over
// trunk, both heads and the base-class classifier, driven by a weighted sum
// of the point-wise classification loss, the elastic prototype loss and the
// mutual alignment loss.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "bml/core/common.hpp"
#include "bml/core/rng.hpp"
#include "bml/core/tensor.hpp"
#include "bml/data/dataset.hpp"
#include "bml/data/episode.hpp"
#include "bml/eval/evaluator.hpp"
#include "bml/losses.hpp"
#include "bml/model/backbone.hpp"
#include "bml/model/classifier.hpp"
#include "bml/train/checkpoint.hpp"

namespace bml::train {

enum class TrainMode { bml, baseline_global, baseline_local };

inline const char* mode_name(TrainMode m) {
  switch (m) {
    case TrainMode::bml: return "bml";
    case TrainMode::baseline_global: return "baseline_global";
    case TrainMode::baseline_local: return "baseline_local";
  }
  return "?";
}

inline TrainMode parse_mode(const std::string& s) {
  if (s == "bml") return TrainMode::bml;
  if (s == "baseline_global") return TrainMode::baseline_global;
  if (s == "baseline_local") return TrainMode::baseline_local;
  fail("unknown train mode '", s, "' (bml | baseline_global | baseline_local)");
}

// Piecewise-constant learning rate: (epoch, rate) milestones, rate of the
// latest milestone at or before the query epoch applies.
using LrSchedule = std::vector<std::pair<int, double>>;

inline double lr_at(const LrSchedule& schedule, int epoch) {
  check(!schedule.empty(), "empty lr schedule");
  double rate = schedule.front().second;
  for (const auto& [start, r] : schedule) {
    if (start > epoch) break;
    rate = r;
  }
  return rate;
}

struct TrainConfig {
  int epochs = 100;
  LrSchedule lr_schedule{{0, 0.1}, {50, 6e-3}, {70, 1.2e-4}};
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int steps_per_epoch = 0;  // 0: ceil(|base images| / episode size)
  bool augment = true;
  data::EpisodeSpec train_spec{15, 1, 6};
  losses::LossWeights weights;
  losses::ElasticConfig elastic;
  double mutual_temperature = 1.0;
  TrainMode mode = TrainMode::bml;
  std::uint64_t seed = 1;
  model::BackboneConfig backbone;
  // per-epoch model selection on the held-out-class split
  data::EpisodeSpec val_spec{5, 5, 6};
  int val_episodes = 200;

  void validate() const {
    check(epochs >= 1, "epochs must be >= 1");
    check(!lr_schedule.empty() && lr_schedule.front().first == 0,
          "lr schedule must start at epoch 0");
    for (size_t i = 0; i < lr_schedule.size(); ++i) {
      check(lr_schedule[i].second > 0, "lr must be positive");
      if (i > 0)
        check(lr_schedule[i].first > lr_schedule[i - 1].first,
              "lr schedule epochs must be strictly increasing");
    }
    check(momentum >= 0 && momentum < 1, "momentum must be in [0,1)");
    check(weight_decay >= 0, "weight_decay must be >= 0");
    check(steps_per_epoch >= 0, "steps_per_epoch must be >= 0");
    check(mutual_temperature > 0, "mutual_temperature must be positive");
    check(val_episodes >= 1, "val_episodes must be >= 1");
    train_spec.validate();
    val_spec.validate();
    weights.validate();
    elastic.validate();
    backbone.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"epochs", c.epochs},
      {"lr_schedule", c.lr_schedule},
      {"momentum", c.momentum},
      {"weight_decay", c.weight_decay},
      {"steps_per_epoch", c.steps_per_epoch},
      {"augment", c.augment},
      {"train_spec", {{"n_way", c.train_spec.n_way},
                      {"k_shot", c.train_spec.k_shot},
                      {"q_query", c.train_spec.q_query}}},
      {"weights", {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}, {"gamma", c.weights.gamma}}},
      {"elastic", {{"alpha1", c.elastic.alpha1}, {"alpha2", c.elastic.alpha2},
                   {"enabled", c.elastic.enabled}}},
      {"mutual_temperature", c.mutual_temperature},
      {"mode", mode_name(c.mode)},
      {"seed", c.seed},
      {"backbone", {{"block_channels", c.backbone.block_channels},
                    {"shared_depth", c.backbone.shared_depth},
                    {"input_size", c.backbone.input_size},
                    {"dropblock_enabled", c.backbone.dropblock_enabled},
                    {"desk_scale", c.backbone.desk_scale}}},
      {"val_spec", {{"n_way", c.val_spec.n_way},
                    {"k_shot", c.val_spec.k_shot},
                    {"q_query", c.val_spec.q_query}}},
      {"val_episodes", c.val_episodes}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.epochs = j.value("epochs", d.epochs);
  c.lr_schedule = j.value("lr_schedule", d.lr_schedule);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.steps_per_epoch = j.value("steps_per_epoch", d.steps_per_epoch);
  c.augment = j.value("augment", d.augment);
  if (j.contains("train_spec")) {
    const auto& t = j.at("train_spec");
    c.train_spec.n_way = t.value("n_way", d.train_spec.n_way);
    c.train_spec.k_shot = t.value("k_shot", d.train_spec.k_shot);
    c.train_spec.q_query = t.value("q_query", d.train_spec.q_query);
  }
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    c.weights.alpha = w.value("alpha", d.weights.alpha);
    c.weights.beta = w.value("beta", d.weights.beta);
    c.weights.gamma = w.value("gamma", d.weights.gamma);
  }
  if (j.contains("elastic")) {
    const auto& e = j.at("elastic");
    c.elastic.alpha1 = e.value("alpha1", d.elastic.alpha1);
    c.elastic.alpha2 = e.value("alpha2", d.elastic.alpha2);
    c.elastic.enabled = e.value("enabled", d.elastic.enabled);
  }
  c.mutual_temperature = j.value("mutual_temperature", d.mutual_temperature);
  c.mode = parse_mode(j.value("mode", std::string("bml")));
  c.seed = j.value("seed", d.seed);
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    if (b.contains("block_channels"))
      c.backbone.block_channels = b.at("block_channels").get<std::array<int, 4>>();
    c.backbone.shared_depth = b.value("shared_depth", d.backbone.shared_depth);
    c.backbone.input_size = b.value("input_size", d.backbone.input_size);
    c.backbone.dropblock_enabled = b.value("dropblock_enabled", d.backbone.dropblock_enabled);
    c.backbone.desk_scale = b.value("desk_scale", d.backbone.desk_scale);
  }
  if (j.contains("val_spec")) {
    const auto& v = j.at("val_spec");
    c.val_spec.n_way = v.value("n_way", d.val_spec.n_way);
    c.val_spec.k_shot = v.value("k_shot", d.val_spec.k_shot);
    c.val_spec.q_query = v.value("q_query", d.val_spec.q_query);
  }
  c.val_episodes = j.value("val_episodes", d.val_episodes);
}

inline std::uint64_t config_hash(const TrainConfig& c) {
  nlohmann::json j = c;
  return hash_str(j.dump());
}

// One optimizer step's worth of diagnostics, written to the jsonl log.
struct StepRecord {
  int epoch = 0;
  int step = 0;
  double lr = 0;
  losses::LossReport report;
};

inline nlohmann::json step_json(const StepRecord& r) {
  nlohmann::json j = r.report.to_json();
  j["event"] = "step";
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["lr"] = r.lr;
  return j;
}

struct ValRecord {
  int epoch = 0;
  double fused = 0, global = 0, local = 0;
  double selected = 0;  // the branch this mode is selected on
  bool is_best = false;
};

inline nlohmann::json val_json(const ValRecord& r) {
  return nlohmann::json{{"event", "val"},     {"epoch", r.epoch}, {"fused", r.fused},
                        {"global", r.global}, {"local", r.local}, {"selected", r.selected},
                        {"best", r.is_best}};
}

template <typename T>
class Trainer {
 public:
  using LogSink = std::function<void(const nlohmann::json&)>;

  static Trainer create(const TrainConfig& cfg, const data::DatasetBundle& bundle) {
    cfg.validate();
    check(bundle.base.image_size == cfg.backbone.input_size,
          "base split images are ", bundle.base.image_size, "px but the backbone wants ",
          cfg.backbone.input_size);
    Trainer t(cfg, bundle);
    t.net_ = model::DualViewNet<T>::create(cfg.backbone, cfg.seed);
    t.clf_ = model::GlobalClassifier<T>(cfg.backbone.feature_channels(),
                                        bundle.base.n_classes());
    t.clf_.init(cfg.seed);
    t.init_optimizer_state();
    return t;
  }

  // Rebuild a trainer mid-run from a checkpoint. The tensors must match the
  // architecture implied by the config; any mismatch is an error.
  static Trainer resume(const std::string& ckpt_path, const data::DatasetBundle& bundle,
                        const TrainConfig& cfg, bool force_config = false) {
    LoadedCheckpoint<T> ck = load_checkpoint<T>(ckpt_path);
    const std::uint64_t want = config_hash(cfg);
    if (ck.meta.config_hash != want)
      check(force_config, "checkpoint config differs from the requested config; "
            "pass force to resume anyway");
    Trainer t = create(cfg, bundle);
    t.epoch_ = ck.meta.epoch;
    t.best_epoch_ = ck.meta.best_epoch;
    t.best_val_ = ck.meta.best_val;
    t.assign_tensors(ck);
    return t;
  }

  // --- introspection -------------------------------------------------------

  model::DualViewNet<T>& net() { return net_; }
  model::GlobalClassifier<T>& classifier() { return clf_; }
  int epoch() const { return epoch_; }
  double best_val() const { return best_val_; }
  int best_epoch() const { return best_epoch_; }
  const TrainConfig& config() const { return cfg_; }
  void set_log_sink(LogSink sink) { log_ = std::move(sink); }

  int steps_per_epoch() const {
    if (cfg_.steps_per_epoch > 0) return cfg_.steps_per_epoch;
    const int per_episode =
        cfg_.train_spec.n_way * (cfg_.train_spec.k_shot + cfg_.train_spec.q_query);
    return (bundle_.base.n_images() + per_episode - 1) / per_episode;
  }

  // Flat copy of every parameter, in visit order. Handy for equality checks.
  std::vector<std::vector<T>> parameter_snapshot() {
    std::vector<std::vector<T>> out;
    visit_params([&](const std::string&, std::vector<T>& p, std::vector<T>&) {
      out.push_back(p);
    });
    return out;
  }

  std::vector<std::pair<std::string, std::vector<T>>> named_parameters() {
    std::vector<std::pair<std::string, std::vector<T>>> out;
    visit_params([&](const std::string& name, std::vector<T>& p, std::vector<T>&) {
      out.emplace_back(name, p);
    });
    return out;
  }

  // --- core step -----------------------------------------------------------

  // Forward both views on one episode, combine the three losses by mode
  // weight, backprop and apply a single momentum-SGD update.
  losses::LossReport train_step(const data::Episode& ep, int epoch, int step) {
    const auto [alpha, beta, gamma] = effective_weights();
    const double lr = lr_at(cfg_.lr_schedule, epoch);

    losses::ElasticConfig ecfg = cfg_.elastic;
    // ramp the margin over the run: first epoch 1/E of full strength, last
    // epoch full strength
    ecfg.epoch = epoch + 1;
    ecfg.total_epochs = cfg_.epochs;

    Tensor4<T> batch = data::to_batch<T>(ep);
    std::vector<data::EpisodeItem> all = ep.support;
    all.insert(all.end(), ep.query.begin(), ep.query.end());
    const std::vector<int> glabels = data::global_labels(all);
    const int n_support = cfg_.train_spec.n_way * cfg_.train_spec.k_shot;
    const int n_total = int(ep.support.size() + ep.query.size());

    Rng drop_rng(derive_seed(cfg_.seed, {0xD0B5, std::uint64_t(epoch), std::uint64_t(step)}));
    net_.zero_grad();
    clf_.zero_grad();
    model::DualViewFeatures<T> feats = net_.forward(batch, /*train=*/true, &drop_rng);

    Tensor4<T> d_global = Tensor4<T>::zeros_like(feats.global_map);
    Tensor4<T> d_local = Tensor4<T>::zeros_like(feats.local_map);
    losses::LossReport report;

    // Global view: every image in the episode classified against the full
    // base-class vocabulary at every spatial point.
    Tensor4<T> scores = clf_.forward(feats.global_map);
    auto gres = losses::global_pointwise_loss(scores, glabels);
    report.global_loss = double(gres.value);
    if (alpha != 0) {
      Tensor4<T> d_scores = gres.grad_scores;
      for (auto& v : d_scores.v) v *= T(alpha);
      d_global = clf_.backward(d_scores);
    }

    // Local view: episodic prototype matching with the elastic penalty,
    // support maps fold prototype gradients back by class mean.
    {
      Tensor4<T> support_maps = slice_images(feats.local_map, 0, n_support);
      Tensor4<T> query_maps = slice_images(feats.local_map, n_support, n_total);
      std::vector<int> support_labels, query_labels;
      for (const auto& it : ep.support) support_labels.push_back(it.local_label);
      for (const auto& it : ep.query) query_labels.push_back(it.local_label);

      Tensor4<T> protos = losses::pointwise_prototypes(support_maps, support_labels,
                                                       cfg_.train_spec.n_way);
      auto lres = losses::elastic_local_loss(query_maps, protos, query_labels, ecfg);
      report.local_loss = double(lres.value);
      report.mean_delta = lres.mean_delta;
      report.mean_d_el = lres.mean_d_el;
      if (beta != 0) {
        for (int i = 0; i < query_maps.n; ++i)
          for (int y = 0; y < query_maps.h; ++y)
            for (int x = 0; x < query_maps.w; ++x)
              for (int c = 0; c < query_maps.c; ++c)
                d_local.at(n_support + i, y, x, c) +=
                    T(beta) * lres.grad_query.at(i, y, x, c);
        // d proto / d support map: each of the k_shot supports of a class
        // contributes 1/k to that class prototype at every point.
        const T inv_k = T(1) / T(cfg_.train_spec.k_shot);
        for (int i = 0; i < n_support; ++i) {
          const int cls = support_labels[size_t(i)];
          for (int y = 0; y < protos.h; ++y)
            for (int x = 0; x < protos.w; ++x)
              for (int c = 0; c < protos.c; ++c)
                d_local.at(i, y, x, c) +=
                    T(beta) * inv_k * lres.grad_protos.at(cls, y, x, c);
        }
      }
    }

    // Mutual view alignment over the whole episode.
    {
      auto mres = losses::mutual_loss(feats.global_map, feats.local_map,
                                      T(cfg_.mutual_temperature));
      report.mutual_loss = double(mres.value);
      if (gamma != 0) {
        for (size_t i = 0; i < d_global.v.size(); ++i) {
          d_global.v[i] += T(gamma) * mres.grad_global.v[i];
          d_local.v[i] += T(gamma) * mres.grad_local.v[i];
        }
      }
    }

    report.total_loss = alpha * report.global_loss + beta * report.local_loss +
                        gamma * report.mutual_loss;
    if (!std::isfinite(report.total_loss))
      throw losses::DivergenceError("non-finite training loss", report);

    net_.backward(d_global, d_local);
    sgd_step(lr);
    return report;
  }

  // --- validation ----------------------------------------------------------

  ValRecord run_validation(int epoch) {
    eval::MetaTestOptions opts;
    opts.n_episodes = cfg_.val_episodes;
    opts.seed = derive_seed(cfg_.seed, {0x7A11DA7E, std::uint64_t(epoch)});
    eval::MetaTestResult r =
        eval::meta_test(eval::make_embedder(net_), bundle_.val, cfg_.val_spec, opts);
    ValRecord v;
    v.epoch = epoch;
    v.fused = r.fused.mean_accuracy;
    v.global = r.global.mean_accuracy;
    v.local = r.local.mean_accuracy;
    switch (cfg_.mode) {
      case TrainMode::bml: v.selected = v.fused; break;
      case TrainMode::baseline_global: v.selected = v.global; break;
      case TrainMode::baseline_local: v.selected = v.local; break;
    }
    return v;
  }

  // --- full loop -----------------------------------------------------------

  // Runs [epoch_, epochs), or up to `until_epoch` if given (for staged runs).
  // `checkpoint_dir` empty: keep everything in memory only. On a non-finite
  // loss the last report is logged and the divergence rethrown.
  void train(const std::string& checkpoint_dir = "", int until_epoch = -1) {
    const int steps = steps_per_epoch();
    const int stop = until_epoch < 0 ? cfg_.epochs : std::min(until_epoch, cfg_.epochs);
    while (epoch_ < stop) {
      for (int step = 0; step < steps; ++step) {
        const std::uint64_t ep_seed = derive_seed(
            cfg_.seed, {0x57E9, std::uint64_t(epoch_), std::uint64_t(step)});
        data::Episode ep =
            data::sample_training_batch(bundle_.base, cfg_.train_spec, ep_seed, cfg_.augment);
        StepRecord rec;
        rec.epoch = epoch_;
        rec.step = step;
        rec.lr = lr_at(cfg_.lr_schedule, epoch_);
        try {
          rec.report = train_step(ep, epoch_, step);
        } catch (const losses::DivergenceError& e) {
          rec.report = e.report;
          emit(step_json(rec));
          throw;
        }
        emit(step_json(rec));
      }
      ValRecord v = run_validation(epoch_);
      if (v.selected > best_val_) {
        best_val_ = v.selected;
        best_epoch_ = epoch_;
        v.is_best = true;
        best_tensors_ = tensor_table_copy();
      }
      emit(val_json(v));
      ++epoch_;  // epoch_ counts completed epochs; a resumed run starts here
      if (!checkpoint_dir.empty()) save(checkpoint_dir + "/last.ckpt");
    }
    if (!checkpoint_dir.empty() && !best_tensors_.empty() && epoch_ >= cfg_.epochs)
      save_best(checkpoint_dir + "/best.ckpt");
  }

  // --- persistence ---------------------------------------------------------

  void save(const std::string& path) {
    std::vector<std::pair<std::string, const std::vector<T>*>> table;
    visit_params([&](const std::string& name, std::vector<T>& p, std::vector<T>&) {
      table.emplace_back("param:" + name, &p);
    });
    for (size_t i = 0; i < momentum_.size(); ++i)
      table.emplace_back("momentum:" + std::to_string(i), &momentum_[i]);
    net_.for_each_buffer([&](const std::string& name, std::vector<T>& b) {
      table.emplace_back("buffer:" + name, &b);
    });
    save_checkpoint<T>(path, meta(), table);
  }

  // Restore the best-so-far weights into the live model (momentum buffers and
  // epoch counter keep their current values; use only after training).
  void load_best_weights() {
    check(!best_tensors_.empty(), "no best checkpoint recorded yet");
    size_t i = 0;
    visit_params([&](const std::string&, std::vector<T>& p, std::vector<T>&) {
      p = best_tensors_[i++];
    });
    for (auto& m : momentum_) m = best_tensors_[i++];
    net_.for_each_buffer([&](const std::string&, std::vector<T>& b) {
      b = best_tensors_[i++];
    });
  }

 private:
  Trainer(const TrainConfig& cfg, const data::DatasetBundle& bundle)
      : cfg_(cfg), bundle_(bundle) {}

  CheckpointMeta meta() const {
    CheckpointMeta m;
    m.scalar = scalar_name<T>();
    m.epoch = epoch_;
    m.best_epoch = best_epoch_;
    m.best_val = best_val_;
    m.config = cfg_;
    m.config_hash = config_hash(cfg_);
    return m;
  }

  void save_best(const std::string& path) {
    // swap best weights in, write, swap back
    std::vector<std::vector<T>> live = tensor_table_copy();
    load_best_weights();
    CheckpointMeta m = meta();
    m.epoch = best_epoch_ + 1;
    std::vector<std::pair<std::string, const std::vector<T>*>> table;
    visit_params([&](const std::string& name, std::vector<T>& p, std::vector<T>&) {
      table.emplace_back("param:" + name, &p);
    });
    for (size_t i = 0; i < momentum_.size(); ++i)
      table.emplace_back("momentum:" + std::to_string(i), &momentum_[i]);
    net_.for_each_buffer([&](const std::string& name, std::vector<T>& b) {
      table.emplace_back("buffer:" + name, &b);
    });
    save_checkpoint<T>(path, m, table);
    size_t i = 0;
    visit_params([&](const std::string&, std::vector<T>& p, std::vector<T>&) {
      p = live[i++];
    });
    for (auto& mm : momentum_) mm = live[i++];
    net_.for_each_buffer([&](const std::string&, std::vector<T>& b) { b = live[i++]; });
  }

  void assign_tensors(LoadedCheckpoint<T>& ck) {
    auto take = [&](const std::string& key, std::vector<T>& dst) {
      auto it = ck.tensors.find(key);
      check(it != ck.tensors.end(), "checkpoint is missing tensor ", key);
      check(it->second.size() == dst.size(), "checkpoint tensor ", key,
            " has size ", it->second.size(), ", model wants ", dst.size());
      dst = std::move(it->second);
    };
    visit_params([&](const std::string& name, std::vector<T>& p, std::vector<T>&) {
      take("param:" + name, p);
    });
    for (size_t i = 0; i < momentum_.size(); ++i)
      take("momentum:" + std::to_string(i), momentum_[i]);
    net_.for_each_buffer([&](const std::string& name, std::vector<T>& b) {
      take("buffer:" + name, b);
    });
  }

  std::vector<std::vector<T>> tensor_table_copy() {
    std::vector<std::vector<T>> out;
    visit_params([&](const std::string&, std::vector<T>& p, std::vector<T>&) {
      out.push_back(p);
    });
    for (auto& m : momentum_) out.push_back(m);
    net_.for_each_buffer([&](const std::string&, std::vector<T>& b) { out.push_back(b); });
    return out;
  }

  void visit_params(const model::ParamFn<T>& fn) {
    net_.for_each_param(fn);
    clf_.for_each_param(fn);
  }

  void init_optimizer_state() {
    momentum_.clear();
    frozen_.clear();
    visit_params([&](const std::string& name, std::vector<T>& p, std::vector<T>&) {
      momentum_.emplace_back(p.size(), T(0));
      frozen_.push_back(is_frozen(name));
    });
  }

  // Baseline modes train a single branch: the other head (and for the local
  // baseline the classifier) stays at its initialization rather than decaying
  // toward zero through a loss it does not participate in.
  bool is_frozen(const std::string& name) const {
    switch (cfg_.mode) {
      case TrainMode::bml:
        return false;
      case TrainMode::baseline_global:
        return name.rfind("head_l", 0) == 0;
      case TrainMode::baseline_local:
        return name.rfind("head_g", 0) == 0 || name.rfind("classifier", 0) == 0;
    }
    return false;
  }

  std::tuple<double, double, double> effective_weights() const {
    switch (cfg_.mode) {
      case TrainMode::bml:
        return {cfg_.weights.alpha, cfg_.weights.beta, cfg_.weights.gamma};
      case TrainMode::baseline_global:
        return {cfg_.weights.alpha, 0.0, 0.0};
      case TrainMode::baseline_local:
        return {0.0, cfg_.weights.beta, 0.0};
    }
    return {0, 0, 0};
  }

  // v = mu*v + (g + wd*p); p -= lr*v
  void sgd_step(double lr) {
    size_t idx = 0;
    visit_params([&](const std::string&, std::vector<T>& p, std::vector<T>& g) {
      std::vector<T>& v = momentum_[idx];
      if (!frozen_[idx]) {
        const T mu = T(cfg_.momentum), wd = T(cfg_.weight_decay), eta = T(lr);
        for (size_t i = 0; i < p.size(); ++i) {
          v[i] = mu * v[i] + (g[i] + wd * p[i]);
          p[i] -= eta * v[i];
        }
      }
      ++idx;
    });
  }

  static Tensor4<T> slice_images(const Tensor4<T>& t, int lo, int hi) {
    Tensor4<T> out(hi - lo, t.h, t.w, t.c);
    std::copy(t.v.begin() + size_t(lo) * t.per_image(),
              t.v.begin() + size_t(hi) * t.per_image(), out.v.begin());
    return out;
  }

  void emit(const nlohmann::json& j) {
    if (log_) log_(j);
  }

  TrainConfig cfg_;
  data::DatasetBundle bundle_;  // copy: splits are cheap shared-image tables
  model::DualViewNet<T> net_;
  model::GlobalClassifier<T> clf_;
  std::vector<std::vector<T>> momentum_;
  std::vector<char> frozen_;
  std::vector<std::vector<T>> best_tensors_;
  int epoch_ = 0;
  int best_epoch_ = -1;
  double best_val_ = -1.0;
  LogSink log_;
};

// Rebuild just the network from a checkpoint (classifier and optimizer state
// are not needed for meta-testing).
template <typename T>
model::DualViewNet<T> restore_network(const LoadedCheckpoint<T>& ck) {
  TrainConfig cfg;
  from_json(ck.meta.config, cfg);
  model::DualViewNet<T> net = model::DualViewNet<T>::create(cfg.backbone, cfg.seed);
  net.for_each_param([&](const std::string& name, std::vector<T>& p, std::vector<T>&) {
    auto it = ck.tensors.find("param:" + name);
    check(it != ck.tensors.end(), "checkpoint is missing tensor param:", name);
    check(it->second.size() == p.size(), "checkpoint tensor param:", name, " size mismatch");
    p = it->second;
  });
  net.for_each_buffer([&](const std::string& name, std::vector<T>& b) {
    auto it = ck.tensors.find("buffer:" + name);
    check(it != ck.tensors.end(), "checkpoint is missing tensor buffer:", name);
    check(it->second.size() == b.size(), "checkpoint tensor buffer:", name, " size mismatch");
    b = it->second;
  });
  return net;
}

}  // namespace bml::train
