// Run-config parsing, dotted-path overrides and snapshot round-trips.

#include <gtest/gtest.h>

#include <cstdlib>

#include <nlohmann/json.hpp>

#include "bml/cli/config.hpp"

namespace {

using bml::Error;
using bml::cli::RunConfig;
using bml::cli::apply_overrides;
using bml::cli::parse_run_config;
using bml::cli::run_config_json;
using bml::train::TrainMode;
using nlohmann::json;

json minimal_config() {
  return json{{"dataset", "synthetic://classes=4,per=8,size=16,seed=1"},
              {"name", "t"},
              {"seed", 3},
              {"epochs", 2},
              {"lr_schedule", {{0, 0.05}}},
              {"backbone",
               {{"block_channels", {8, 16, 32, 32}}, {"input_size", 16}, {"shared_depth", 3}}},
              {"train_spec", {{"n_way", 3}, {"k_shot", 1}, {"q_query", 3}}},
              {"val_spec", {{"n_way", 3}, {"k_shot", 2}, {"q_query", 3}}},
              {"evals", {{{"n_way", 3}, {"k_shot", 2}, {"q_query", 3}, {"episodes", 4}}}}};
}

TEST(Overrides, ParsesJsonValuesAndFallsBackToStrings) {
  json base{{"a", 1}, {"nested", {{"b", true}}}};
  json out = apply_overrides(base, {"a=2.5", "nested.b=false", "nested.c=[1,2]", "s=hello"});
  EXPECT_DOUBLE_EQ(out["a"].get<double>(), 2.5);
  EXPECT_EQ(out["nested"]["b"], false);
  EXPECT_EQ(out["nested"]["c"], json({1, 2}));
  EXPECT_EQ(out["s"], "hello");  // unquoted word stays a string
}

TEST(Overrides, SurfaceExamplesChangeTheParsedConfig) {
  json base = minimal_config();
  RunConfig plain = parse_run_config(base);
  EXPECT_EQ(plain.train.mode, TrainMode::bml);
  EXPECT_TRUE(plain.train.elastic.enabled);

  RunConfig local = parse_run_config(apply_overrides(base, {"mode=baseline_local"}));
  EXPECT_EQ(local.train.mode, TrainMode::baseline_local);

  RunConfig no_elastic =
      parse_run_config(apply_overrides(base, {"losses.elastic.enabled=false"}));
  EXPECT_FALSE(no_elastic.train.elastic.enabled);

  RunConfig no_mutual =
      parse_run_config(apply_overrides(base, {"losses.weights.gamma=0"}));
  EXPECT_DOUBLE_EQ(no_mutual.train.weights.gamma, 0.0);
}

TEST(Overrides, MalformedOverrideIsRejected) {
  json base = minimal_config();
  EXPECT_THROW(apply_overrides(base, {"no_equals_sign"}), Error);
  EXPECT_THROW(apply_overrides(base, {"=value"}), Error);
}

TEST(RunConfigJson, SnapshotRoundTripIsLossless) {
  RunConfig rc = parse_run_config(minimal_config());
  rc.degradations = {"pepper:0.02", "blur:0.5"};
  rc.out_root = "elsewhere";
  RunConfig back = parse_run_config(run_config_json(rc));
  EXPECT_EQ(bml::train::config_hash(rc.train), bml::train::config_hash(back.train));
  EXPECT_EQ(back.dataset, rc.dataset);
  EXPECT_EQ(back.name, rc.name);
  EXPECT_EQ(back.out_root, "elsewhere");
  EXPECT_EQ(back.degradations, rc.degradations);
  ASSERT_EQ(back.evals.size(), rc.evals.size());
  EXPECT_EQ(back.evals[0].spec.n_way, rc.evals[0].spec.n_way);
  EXPECT_EQ(back.evals[0].n_episodes, rc.evals[0].n_episodes);
}

TEST(RunConfigJson, SeedFlowsIntoTraining) {
  RunConfig rc = parse_run_config(minimal_config());
  EXPECT_EQ(rc.train.seed, 3u);
  RunConfig reseeded = parse_run_config(apply_overrides(minimal_config(), {"seed=42"}));
  EXPECT_EQ(reseeded.train.seed, 42u);
}

TEST(RunConfigValidate, CatchesMissingPiecesAndBadStrings) {
  RunConfig rc = parse_run_config(minimal_config());
  EXPECT_NO_THROW(rc.validate());

  RunConfig no_data = rc;
  no_data.dataset.clear();
  EXPECT_THROW(no_data.validate(), Error);

  RunConfig bad_degrade = rc;
  bad_degrade.degradations = {"meteor:9"};
  EXPECT_THROW(bad_degrade.validate(), Error);

  RunConfig no_evals = rc;
  no_evals.evals.clear();
  EXPECT_THROW(no_evals.validate(), Error);
}

TEST(RunConfigRoot, EnvironmentVariableSuppliesDefaultRoot) {
  RunConfig rc = parse_run_config(minimal_config());
  ASSERT_TRUE(rc.out_root.empty());
  unsetenv("BML_RUN_ROOT");
  EXPECT_EQ(rc.resolved_root(), "runs");
  setenv("BML_RUN_ROOT", "/tmp/bml_roots", 1);
  EXPECT_EQ(rc.resolved_root(), "/tmp/bml_roots");
  EXPECT_EQ(rc.run_dir(), "/tmp/bml_roots/t");
  rc.out_root = "explicit";
  EXPECT_EQ(rc.resolved_root(), "explicit");  // config wins over environment
  unsetenv("BML_RUN_ROOT");
}

}  // namespace
