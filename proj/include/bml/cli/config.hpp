#pragma once

// Run configuration for the command-line tool: a JSON file describing the
// dataset, training hyperparameters and evaluation jobs, plus dotted-path
// `--set key.sub=value` overrides for sweeps.

#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bml/core/common.hpp"
#include "bml/data/degrade.hpp"
#include "bml/data/episode.hpp"
#include "bml/train/trainer.hpp"

namespace bml::cli {

struct EvalJob {
  data::EpisodeSpec spec{5, 5, 15};
  int n_episodes = 2000;
};

struct RunConfig {
  std::string dataset;     // directory path or synthetic:// URI
  std::string name = "run";
  std::string out_root;    // empty: $BML_RUN_ROOT, else "runs"
  train::TrainConfig train;
  std::vector<EvalJob> evals{{{5, 1, 15}, 2000}, {{5, 5, 15}, 2000}};
  std::vector<std::string> degradations;  // parse_degradation strings

  void validate() const {
    check(!dataset.empty(), "config needs a dataset (path or synthetic:// URI)");
    check(!name.empty(), "config needs a run name");
    train.validate();
    check(!evals.empty(), "config needs at least one eval job");
    for (const auto& e : evals) {
      e.spec.validate();
      check(e.n_episodes >= 1, "eval job needs at least one episode");
    }
    for (const auto& d : degradations) (void)data::parse_degradation(d);
  }

  std::string resolved_root() const {
    if (!out_root.empty()) return out_root;
    if (const char* env = std::getenv("BML_RUN_ROOT"); env && *env) return env;
    return "runs";
  }

  std::string run_dir() const { return resolved_root() + "/" + name; }
};

// The on-disk layout keeps training knobs at the top level (mode, epochs,
// schedule, ...) and groups the loss controls under "losses" so override
// paths read naturally: `--set mode=baseline_local`,
// `--set losses.elastic.enabled=false`.
inline nlohmann::json run_config_json(const RunConfig& c) {
  nlohmann::json t = c.train;  // flat TrainConfig fields
  nlohmann::json j;
  j["dataset"] = c.dataset;
  j["name"] = c.name;
  j["out_root"] = c.out_root;
  j["seed"] = c.train.seed;
  for (const char* key : {"epochs", "lr_schedule", "momentum", "weight_decay",
                          "steps_per_epoch", "augment", "train_spec", "mode",
                          "backbone", "val_spec", "val_episodes"})
    j[key] = t.at(key);
  j["losses"] = {{"weights", t.at("weights")},
                 {"elastic", t.at("elastic")},
                 {"mutual_temperature", t.at("mutual_temperature")}};
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& e : c.evals)
    evals.push_back({{"n_way", e.spec.n_way},
                     {"k_shot", e.spec.k_shot},
                     {"q_query", e.spec.q_query},
                     {"episodes", e.n_episodes}});
  j["evals"] = evals;
  j["degradations"] = c.degradations;
  return j;
}

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  c.dataset = j.value("dataset", std::string());
  c.name = j.value("name", c.name);
  c.out_root = j.value("out_root", std::string());

  // rebuild the flat TrainConfig json from the run layout
  nlohmann::json t = j;
  t.erase("dataset");
  t.erase("name");
  t.erase("out_root");
  t.erase("evals");
  t.erase("degradations");
  if (j.contains("losses")) {
    const auto& l = j.at("losses");
    if (l.contains("weights")) t["weights"] = l.at("weights");
    if (l.contains("elastic")) t["elastic"] = l.at("elastic");
    if (l.contains("mutual_temperature"))
      t["mutual_temperature"] = l.at("mutual_temperature");
    t.erase("losses");
  }
  c.train = t.get<train::TrainConfig>();

  if (j.contains("evals")) {
    c.evals.clear();
    for (const auto& e : j.at("evals")) {
      EvalJob job;
      job.spec.n_way = e.value("n_way", job.spec.n_way);
      job.spec.k_shot = e.value("k_shot", job.spec.k_shot);
      job.spec.q_query = e.value("q_query", job.spec.q_query);
      job.n_episodes = e.value("episodes", job.n_episodes);
      c.evals.push_back(job);
    }
  }
  if (j.contains("degradations"))
    c.degradations = j.at("degradations").get<std::vector<std::string>>();
  return c;
}

// Each override is `dotted.path=value`; the value is parsed as JSON when it
// parses (numbers, booleans, arrays) and kept as a string otherwise.
inline nlohmann::json apply_overrides(nlohmann::json base,
                                      const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    check(eq != std::string::npos && eq > 0, "override must look like path=value: ", s);
    std::string path = s.substr(0, eq);
    const std::string raw = s.substr(eq + 1);
    for (auto& ch : path)
      if (ch == '.') ch = '/';
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = raw;  // unquoted strings like mode=baseline_local
    }
    try {
      base[nlohmann::json::json_pointer("/" + path)] = value;
    } catch (const nlohmann::json::exception& e) {
      fail("cannot apply override ", s, ": ", e.what());
    }
  }
  return base;
}

}  // namespace bml::cli
