// Command-line front end: train runs, meta-test evaluation, ablation grids,
// similarity rankings, embedding export and synthetic dataset generation.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bml/cli/config.hpp"
#include "bml/data/dataset.hpp"
#include "bml/data/degrade.hpp"
#include "bml/data/image_io.hpp"
#include "bml/data/synthetic.hpp"
#include "bml/eval/evaluator.hpp"
#include "bml/train/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  bml::check(in.good(), "cannot read ", path);
  try {
    return json::parse(in);
  } catch (const std::exception& e) {
    bml::fail("bad json in ", path, ": ", e.what());
  }
}

void write_text_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::trunc);
  bml::check(out.good(), "cannot write ", path);
  out << body;
}

bml::data::DatasetBundle load_bundle(const std::string& source, int image_size) {
  bml::data::DatasetBundle bundle;
  if (source.rfind("synthetic://", 0) == 0) {
    bml::data::SyntheticSpec spec = bml::data::parse_synthetic_uri(source);
    bml::check(spec.size == image_size, "synthetic images are ", spec.size,
               "px but the model wants ", image_size,
               "px; set size= in the URI to match");
    bundle = bml::data::synthetic_bundle(spec);
  } else {
    bundle = bml::data::load_dataset(source, "", image_size);
  }
  bundle.validate();
  return bundle;
}

const bml::data::DatasetSplit& pick_split(const bml::data::DatasetBundle& bundle,
                                          const std::string& name) {
  if (name == "base") return bundle.base;
  if (name == "val") return bundle.val;
  if (name == "novel") return bundle.novel;
  bml::fail("unknown split '", name, "' (base | val | novel)");
}

std::vector<bml::data::Degradation> parse_degrade_flags(const std::vector<std::string>& flags) {
  std::vector<bml::data::Degradation> out;
  for (const auto& f : flags) out.push_back(bml::data::parse_degradation(f));
  return out;
}

std::string result_csv(const bml::eval::MetaTestResult& r) {
  std::ostringstream csv;
  csv << "episode,fused,global,local\n";
  for (size_t i = 0; i < r.fused.per_episode.size(); ++i)
    csv << i << "," << r.fused.per_episode[i] << "," << r.global.per_episode[i] << ","
        << r.local.per_episode[i] << "\n";
  return csv.str();
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  bool resume = false;
  bool force = false;
};

int cmd_train(const TrainArgs& a) {
  json merged = bml::cli::apply_overrides(read_json_file(a.config), a.sets);
  bml::cli::RunConfig rc = bml::cli::parse_run_config(merged);
  rc.validate();

  const std::string dir = rc.run_dir();
  const std::string ckpt_dir = dir + "/checkpoints";
  if (!a.resume && fs::exists(dir + "/config.snapshot"))
    bml::fail("run '", rc.name, "' already exists under ", rc.resolved_root(),
              " (pass --resume to continue it)");
  fs::create_directories(ckpt_dir);
  fs::create_directories(dir + "/reports");
  // snapshot before any computation so the run is reproducible from disk
  write_text_file(dir + "/config.snapshot", bml::cli::run_config_json(rc).dump(2) + "\n");

  bml::data::DatasetBundle bundle = load_bundle(rc.dataset, rc.train.backbone.input_size);

  bml::train::Trainer<float> trainer = [&] {
    if (a.resume) {
      const std::string last = ckpt_dir + "/last.ckpt";
      bml::check(fs::exists(last), "no checkpoint to resume at ", last);
      if (a.force)
        std::cerr << "warning: resuming with a config that may differ from the checkpoint\n";
      return bml::train::Trainer<float>::resume(last, bundle, rc.train, a.force);
    }
    return bml::train::Trainer<float>::create(rc.train, bundle);
  }();

  std::ofstream log(dir + "/log.jsonl", a.resume ? std::ios::app : std::ios::trunc);
  bml::check(log.good(), "cannot write ", dir, "/log.jsonl");
  trainer.set_log_sink([&](const json& j) { log << j.dump() << "\n"; });

  const auto t0 = std::chrono::steady_clock::now();
  trainer.train(ckpt_dir);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log.flush();

  // final meta-test with the selected weights
  if (trainer.best_epoch() >= 0) trainer.load_best_weights();
  auto embedder = bml::eval::make_embedder(trainer.net());
  json finals = json::array();
  for (const auto& job : rc.evals) {
    bml::eval::MetaTestOptions opts;
    opts.n_episodes = job.n_episodes;
    opts.seed = bml::derive_seed(rc.train.seed, {0xF1EAu});
    json entry;
    entry["spec"] = {{"n_way", job.spec.n_way},
                     {"k_shot", job.spec.k_shot},
                     {"q_query", job.spec.q_query},
                     {"episodes", job.n_episodes}};
    entry["clean"] =
        bml::eval::meta_test(embedder, bundle.novel, job.spec, opts).to_json();
    if (!rc.degradations.empty()) {
      opts.degradations = parse_degrade_flags(rc.degradations);
      entry["degraded"] =
          bml::eval::meta_test(embedder, bundle.novel, job.spec, opts).to_json();
      entry["degradations"] = rc.degradations;
    }
    finals.push_back(entry);
  }
  write_text_file(dir + "/reports/final_eval.json", finals.dump(2) + "\n");

  json summary{{"run", rc.name},
               {"epochs", trainer.epoch()},
               {"best_epoch", trainer.best_epoch()},
               {"best_val_accuracy", trainer.best_val()},
               {"elapsed_sec", elapsed}};
  write_text_file(dir + "/reports/train_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << "\n";
  std::cout << "artifacts: " << dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "novel";
  int way = 5, shot = 5, query = 15, episodes = 2000;
  std::uint64_t seed = 0x5EED;
  std::vector<std::string> degrade;
  std::string fusion = "sum";
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  auto ck = bml::train::load_checkpoint<float>(a.checkpoint);
  bml::model::DualViewNet<float> net = bml::train::restore_network(ck);
  bml::data::DatasetBundle bundle = load_bundle(a.data, net.cfg.input_size);
  const bml::data::DatasetSplit& split = pick_split(bundle, a.split);

  bml::data::EpisodeSpec spec{a.way, a.shot, a.query};
  spec.validate();
  bml::eval::MetaTestOptions opts;
  opts.n_episodes = a.episodes;
  opts.seed = a.seed;
  opts.fusion = bml::eval::parse_fusion(a.fusion);
  opts.degradations = parse_degrade_flags(a.degrade);

  bml::eval::MetaTestResult r =
      bml::eval::meta_test(bml::eval::make_embedder(net), split, spec, opts);

  json out = r.to_json();
  out["checkpoint"] = a.checkpoint;
  out["split"] = a.split;
  out["spec"] = {{"n_way", spec.n_way},
                 {"k_shot", spec.k_shot},
                 {"q_query", spec.q_query},
                 {"episodes", a.episodes}};
  out["seed"] = a.seed;
  out["fusion"] = a.fusion;
  json degs = json::array();
  for (const auto& d : opts.degradations) degs.push_back(d.describe());
  out["degradations"] = degs;

  std::cout << out.dump(2) << "\n";
  if (!a.out.empty()) {
    write_text_file(a.out + ".json", out.dump(2) + "\n");
    write_text_file(a.out + ".csv", result_csv(r));
  }
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateArgs {
  std::string config;
  std::vector<std::string> sets;
  std::string axis;
  std::vector<std::uint64_t> seeds{1, 2, 3};
};

// one full train + meta-test on the first eval job, entirely in memory
bml::eval::MetaTestResult run_cell(const bml::cli::RunConfig& rc) {
  bml::data::DatasetBundle bundle = load_bundle(rc.dataset, rc.train.backbone.input_size);
  bml::train::Trainer<float> trainer = bml::train::Trainer<float>::create(rc.train, bundle);
  trainer.train();
  if (trainer.best_epoch() >= 0) trainer.load_best_weights();
  const bml::cli::EvalJob& job = rc.evals.front();
  bml::eval::MetaTestOptions opts;
  opts.n_episodes = job.n_episodes;
  opts.seed = 0xAB1A7E;  // shared across cells: same novel episodes everywhere
  return bml::eval::meta_test(bml::eval::make_embedder(trainer.net()), bundle.novel,
                              job.spec, opts);
}

int cmd_ablate(const AblateArgs& a) {
  json base = bml::cli::apply_overrides(read_json_file(a.config), a.sets);

  // axis -> (row label, overrides) grid
  std::vector<std::pair<std::string, std::vector<std::string>>> grid;
  if (a.axis == "mutual") {
    grid = {{"gamma=0", {"losses.weights.gamma=0"}}, {"gamma=1", {"losses.weights.gamma=1"}}};
  } else if (a.axis == "elastic") {
    grid = {{"elastic=off", {"losses.elastic.enabled=false"}},
            {"elastic=on", {"losses.elastic.enabled=true"}}};
  } else if (a.axis == "shared_depth") {
    for (int d = 0; d <= 3; ++d)
      grid.push_back({"S" + std::to_string(d) + "I" + std::to_string(4 - d),
                      {"backbone.shared_depth=" + std::to_string(d)}});
  } else if (a.axis == "mode") {
    grid = {{"bml", {"mode=bml"}},
            {"baseline_global", {"mode=baseline_global"}},
            {"baseline_local", {"mode=baseline_local"}}};
  } else {
    bml::fail("unknown ablation axis '", a.axis,
              "' (mutual | elastic | shared_depth | mode)");
  }

  std::ostringstream csv;
  csv << "row,seed,fused,global,local,params\n";
  std::string out_path;
  for (const auto& [label, overrides] : grid) {
    double mean_fused = 0;
    for (std::uint64_t seed : a.seeds) {
      std::vector<std::string> cell = overrides;
      cell.push_back("seed=" + std::to_string(seed));
      bml::cli::RunConfig rc = bml::cli::parse_run_config(bml::cli::apply_overrides(base, cell));
      rc.validate();
      if (out_path.empty())
        out_path = rc.resolved_root() + "/" + rc.name + "-ablate-" + a.axis + ".csv";
      bml::eval::MetaTestResult r = run_cell(rc);
      mean_fused += r.fused.mean_accuracy;
      csv << label << "," << seed << "," << r.fused.mean_accuracy << ","
          << r.global.mean_accuracy << "," << r.local.mean_accuracy << ","
          << bml::model::parameter_count(rc.train.backbone) << "\n";
      std::cerr << "[ablate] " << label << " seed " << seed << ": fused "
                << r.fused.mean_accuracy << "\n";
    }
    csv << label << ",mean," << mean_fused / double(a.seeds.size()) << ",,,\n";
  }
  fs::create_directories(fs::path(out_path).parent_path());
  write_text_file(out_path, csv.str());
  std::cout << csv.str();
  std::cout << "written: " << out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// rank
// ---------------------------------------------------------------------------

struct RankArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "novel";
  int way = 4, shot = 1, query = 4;
  std::uint64_t episode_seed = 1;
  std::string out;
};

int cmd_rank(const RankArgs& a) {
  auto ck = bml::train::load_checkpoint<float>(a.checkpoint);
  bml::model::DualViewNet<float> net = bml::train::restore_network(ck);
  bml::data::DatasetBundle bundle = load_bundle(a.data, net.cfg.input_size);
  const bml::data::DatasetSplit& split = pick_split(bundle, a.split);

  bml::data::EpisodeSpec spec{a.way, a.shot, a.query};
  spec.validate();
  bml::data::Episode ep = bml::data::sample_episode(split, spec, a.episode_seed);
  bml::eval::RankingReport rr =
      bml::eval::similarity_ranking(bml::eval::make_embedder(net), ep);

  std::ostringstream table;
  table << "episode seed " << a.episode_seed << ", " << a.way << "-way " << a.shot
        << "-shot, " << ep.query.size() << " queries\n";
  for (size_t q = 0; q < rr.per_query.size(); ++q) {
    const auto& item = ep.query[q];
    table << "query " << q << " (true " << split.classes[std::size_t(ep.class_map[std::size_t(item.local_label)])]
          << ", rank " << rr.truth_rank[q] << "): ";
    for (size_t j = 0; j < rr.per_query[q].size(); ++j) {
      const auto& [cls, score] = rr.per_query[q][j];
      if (j) table << "  ";
      table << split.classes[std::size_t(cls)] << " " << score;
    }
    table << "\n";
  }
  table << "mean rank of the true class: " << rr.mean_truth_rank << "\n";
  std::cout << table.str();
  if (!a.out.empty()) write_text_file(a.out, table.str());
  return 0;
}

// ---------------------------------------------------------------------------
// export-embeddings
// ---------------------------------------------------------------------------

struct ExportArgs {
  std::string checkpoint;
  std::string data;
  std::string split = "novel";
  int max_per_class = 20;
  std::string out = "embeddings.csv";
};

int cmd_export(const ExportArgs& a) {
  auto ck = bml::train::load_checkpoint<float>(a.checkpoint);
  bml::model::DualViewNet<float> net = bml::train::restore_network(ck);
  bml::data::DatasetBundle bundle = load_bundle(a.data, net.cfg.input_size);
  const bml::data::DatasetSplit& split = pick_split(bundle, a.split);
  bml::eval::export_embeddings(bml::eval::make_embedder(net), split, a.max_per_class, a.out);
  std::cout << "written: " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// make-synthetic
// ---------------------------------------------------------------------------

struct MakeSynthArgs {
  std::string uri = "synthetic://classes=8,per=50,size=32,seed=7";
  std::string out = "synthetic_data";
};

int cmd_make_synthetic(const MakeSynthArgs& a) {
  bml::data::SyntheticSpec spec = bml::data::parse_synthetic_uri(a.uri);
  bml::data::DatasetBundle bundle = bml::data::synthetic_bundle(spec);
  json manifest;
  int written = 0;
  for (const bml::data::DatasetSplit* split : {&bundle.base, &bundle.val, &bundle.novel}) {
    const std::string split_name = bml::data::role_name(split->role);
    for (int cl = 0; cl < split->n_classes(); ++cl) {
      const std::string dir = a.out + "/" + split_name + "/" + split->classes[std::size_t(cl)];
      fs::create_directories(dir);
      manifest[split->classes[std::size_t(cl)]] = split_name;
      const auto& sources = split->images[std::size_t(cl)];
      for (size_t i = 0; i < sources.size(); ++i) {
        bml::data::Image img = sources[i].load(split->image_size);
        bml::data::write_png(dir + "/" + std::to_string(i) + ".png", img);
        ++written;
      }
    }
  }
  write_text_file(a.out + "/manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << written << " images under " << a.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"binocular-view few-shot classification toolkit"};
  app.require_subcommand(1);

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a model from a run config");
  train->add_option("--config", train_args.config, "run config json")->required();
  train->add_option("--set", train_args.sets, "dotted-path override, e.g. mode=baseline_local");
  train->add_flag("--resume", train_args.resume, "continue from the run's last checkpoint");
  train->add_flag("--force", train_args.force, "resume even if the config changed");

  EvalArgs eval_args;
  CLI::App* ev = app.add_subcommand("eval", "meta-test a checkpoint");
  ev->add_option("checkpoint", eval_args.checkpoint, "checkpoint file")->required();
  ev->add_option("--data", eval_args.data, "dataset path or synthetic:// URI")->required();
  ev->add_option("--split", eval_args.split, "base | val | novel (default novel)");
  ev->add_option("--way", eval_args.way, "classes per episode");
  ev->add_option("--shot", eval_args.shot, "support images per class");
  ev->add_option("--query", eval_args.query, "query images per class");
  ev->add_option("--n", eval_args.episodes, "number of episodes");
  ev->add_option("--seed", eval_args.seed, "episode stream seed");
  ev->add_option("--degrade", eval_args.degrade,
                 "degradation preset(s): resize[:S] | blur[:a-b] | pepper[:r] | jitter[:B]");
  ev->add_option("--fusion", eval_args.fusion, "sum | softmax_sum");
  ev->add_option("--out", eval_args.out, "report basename (writes .json and .csv)");

  AblateArgs ablate_args;
  CLI::App* ab = app.add_subcommand("ablate", "train/evaluate a comparison grid");
  ab->add_option("--config", ablate_args.config, "run config json")->required();
  ab->add_option("--set", ablate_args.sets, "dotted-path override applied to every cell");
  ab->add_option("--axis", ablate_args.axis, "mutual | elastic | shared_depth | mode")
      ->required();
  ab->add_option("--seeds", ablate_args.seeds, "seeds to repeat each cell");

  RankArgs rank_args;
  CLI::App* rk = app.add_subcommand("rank", "similarity ranking on one episode");
  rk->add_option("checkpoint", rank_args.checkpoint, "checkpoint file")->required();
  rk->add_option("--data", rank_args.data, "dataset path or synthetic:// URI")->required();
  rk->add_option("--split", rank_args.split, "base | val | novel");
  rk->add_option("--way", rank_args.way, "classes per episode");
  rk->add_option("--shot", rank_args.shot, "support images per class");
  rk->add_option("--query", rank_args.query, "query images per class");
  rk->add_option("--episode-seed", rank_args.episode_seed, "episode seed");
  rk->add_option("--out", rank_args.out, "also write the table to this file");

  ExportArgs export_args;
  CLI::App* ex = app.add_subcommand("export-embeddings", "dump per-image embeddings to csv");
  ex->add_option("checkpoint", export_args.checkpoint, "checkpoint file")->required();
  ex->add_option("--data", export_args.data, "dataset path or synthetic:// URI")->required();
  ex->add_option("--split", export_args.split, "base | val | novel");
  ex->add_option("--max-per-class", export_args.max_per_class, "images per class");
  ex->add_option("--out", export_args.out, "output csv path");

  MakeSynthArgs synth_args;
  CLI::App* mk = app.add_subcommand("make-synthetic", "materialize a synthetic dataset as png");
  mk->add_option("uri", synth_args.uri, "synthetic:// URI");
  mk->add_option("--out", synth_args.out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_args);
    if (ev->parsed()) return cmd_eval(eval_args);
    if (ab->parsed()) return cmd_ablate(ablate_args);
    if (rk->parsed()) return cmd_rank(rank_args);
    if (ex->parsed()) return cmd_export(export_args);
    if (mk->parsed()) return cmd_make_synthetic(synth_args);
  } catch (const bml::losses::DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
