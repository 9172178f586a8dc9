// resadapt command-line tool: feature extraction, training regimes,
// transfer, evaluation, and significance statistics behind one binary.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "resadapt/commands.hpp"
#include "resadapt/runconfig.hpp"
#include "resadapt/tensor.hpp"

namespace {

using resadapt::RunConfig;

// --config FILE and repeated --set key=value, shared by every subcommand.
struct CommonOpts {
  std::string config_file;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file,
                    "key = value config file (see dump-config)");
    cmd->add_option("--set", sets, "override one config key, e.g. "
                                   "--set train.batch_size=16");
  }

  RunConfig build() const {
    RunConfig config = resadapt::default_run_config();
    if (!config_file.empty())
      config = resadapt::load_run_config(config_file, config);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw resadapt::ConfigError("--set expects key=value, got: " + kv);
      resadapt::apply_key_value(config, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return config;
  }
};

void print_records(const std::vector<resadapt::RunRecord>& records,
                   const std::string& model_id) {
  for (const auto& r : records)
    std::printf("model=%s corpus=%s seed=%llu dev_uar=%.6f test_uar=%.6f\n",
                model_id.c_str(), r.corpus_id.c_str(),
                static_cast<unsigned long long>(r.seed), r.final_dev_uar,
                r.final_test_uar);
}

std::string resolve_model_id(const RunConfig& config,
                             const std::string& fallback) {
  return config.model_id.empty() ? fallback : config.model_id;
}

}  // namespace

int main(int argc, char** argv) {
  resadapt::set_finite_checks(true);

  CLI::App app{"resadapt: residual-adapter audio recognition pipeline"};
  app.require_subcommand(1);

  // ---- features ----
  auto* features = app.add_subcommand(
      "features", "Extract and cache log-mel features for manifests");
  CommonOpts features_common;
  features_common.attach(features);
  std::vector<std::string> features_manifests;
  std::string features_cache;
  std::uint64_t features_seed = 0;
  bool features_force = false;
  features->add_option("manifests", features_manifests, "manifest CSV paths")
      ->required();
  features->add_option("--cache-dir", features_cache, "feature cache root");
  features->add_option("--seed", features_seed, "chunking seed (default 0)");
  features->add_flag("--force", features_force, "rewrite existing entries");
  features->callback([&] {
    RunConfig config = features_common.build();
    if (features->count("--cache-dir")) config.cache_dir = features_cache;
    for (const auto& manifest : features_manifests) {
      const auto result =
          resadapt::cmd_features(manifest, config, features_seed,
                                 features_force);
      std::printf("%s: wrote %d, skipped %d\n", manifest.c_str(),
                  result.written, result.skipped);
    }
  });

  // ---- train ----
  auto* train = app.add_subcommand("train", "Train one of the five regimes");
  train->require_subcommand(1);

  struct TrainOpts {
    CommonOpts common;
    std::vector<std::string> manifests;
    std::string seeds, model_id, scores, cache, ckpt_dir, records_dir, from;

    void attach(CLI::App* cmd, bool with_from) {
      common.attach(cmd);
      cmd->add_option("--manifest", manifests, "corpus manifest CSV path")
          ->take_all();
      cmd->add_option("--seeds", seeds, "seed, list, or range (e.g. 0..9)");
      cmd->add_option("--model-id", model_id, "score-file model id");
      cmd->add_option("--scores", scores, "JSONL score file to append to");
      cmd->add_option("--cache-dir", cache, "feature cache root");
      cmd->add_option("--checkpoint-dir", ckpt_dir, "checkpoint directory");
      cmd->add_option("--records-dir", records_dir, "run record directory");
      if (with_from)
        cmd->add_option("--from", from, "pretrained checkpoint to adapt")
            ->required();
    }

    RunConfig build(CLI::App* cmd, const std::string& regime) const {
      RunConfig config = common.build();
      config.regime = regime;
      if (cmd->count("--manifest")) config.manifests = manifests;
      if (cmd->count("--seeds")) config.seeds = seeds;
      if (cmd->count("--model-id")) config.model_id = model_id;
      if (cmd->count("--scores")) config.scores_path = scores;
      if (cmd->count("--cache-dir")) config.cache_dir = cache;
      if (cmd->count("--checkpoint-dir")) config.checkpoint_dir = ckpt_dir;
      if (cmd->count("--records-dir")) config.records_dir = records_dir;
      const CLI::Option* from_opt = cmd->get_option_no_throw("--from");
      if (from_opt && from_opt->count()) config.from_checkpoint = from;
      return config;
    }
  };

  auto add_train_regime = [&](const char* name, const char* help,
                              const std::string& regime, bool with_from) {
    auto* cmd = train->add_subcommand(name, help);
    auto opts = std::make_shared<TrainOpts>();
    opts->attach(cmd, with_from);
    cmd->callback([cmd, opts, regime] {
      const RunConfig config = opts->build(cmd, regime);
      const auto records = resadapt::cmd_train(config);
      print_records(records, resolve_model_id(config, regime));
    });
  };
  add_train_regime("scratch", "Full model from random initialization",
                   "scratch", false);
  add_train_regime("head", "New classifier head on a frozen pretrained model",
                   "head_only", true);
  add_train_regime("adapters", "New adapters + head on a frozen shared trunk",
                   "adapters_and_head", true);
  add_train_regime("multidomain", "Joint round-robin over several corpora",
                   "shared_multidomain", false);

  {
    auto* cmd = train->add_subcommand(
        "aggregate-av", "Arousal/valence aggregation across corpora");
    auto opts = std::make_shared<TrainOpts>();
    opts->attach(cmd, false);
    auto target = std::make_shared<std::string>("AV");
    auto mapping_path = std::make_shared<std::string>();
    auto aliases_path = std::make_shared<std::string>();
    cmd->add_option("target", *target, "A (arousal), V (valence), or AV")
        ->check(CLI::IsMember({"A", "V", "AV", "arousal", "valence", "both"}));
    cmd->add_option("--av-mapping", *mapping_path,
                    "label,arousal,valence CSV (default: built-in table)");
    cmd->add_option("--aliases", *aliases_path, "label,canonical alias CSV");
    cmd->callback([cmd, opts, target, mapping_path, aliases_path] {
      RunConfig config = opts->build(cmd, "scratch");
      if (*target == "A" || *target == "arousal")
        config.target = "arousal";
      else if (*target == "V" || *target == "valence")
        config.target = "valence";
      else
        config.target = "both";
      if (cmd->count("--av-mapping")) config.av_mapping_path = *mapping_path;
      if (cmd->count("--aliases")) config.av_aliases_path = *aliases_path;
      const auto records = resadapt::cmd_train_aggregate_av(config);
      print_records(records, resolve_model_id(config, "av-" + config.target));
    });
  }

  // ---- eval ----
  auto* eval = app.add_subcommand("eval", "UAR of a checkpoint on a partition");
  CommonOpts eval_common;
  eval_common.attach(eval);
  std::string eval_ckpt, eval_manifest, eval_partition = "test";
  std::string eval_model_id, eval_scores, eval_cache;
  std::uint64_t eval_seed = 0;
  bool eval_no_append = false;
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--manifest", eval_manifest, "corpus manifest CSV")
      ->required();
  eval->add_option("--partition", eval_partition, "train | dev | test");
  eval->add_option("--model-id", eval_model_id, "score-file model id");
  eval->add_option("--scores", eval_scores, "JSONL score file to append to");
  eval->add_option("--cache-dir", eval_cache, "feature cache root");
  eval->add_option("--seed", eval_seed, "seed recorded in the score line");
  eval->add_flag("--no-append", eval_no_append, "print only, do not append");
  eval->callback([&] {
    RunConfig config = eval_common.build();
    if (eval->count("--model-id")) config.model_id = eval_model_id;
    if (eval->count("--scores")) config.scores_path = eval_scores;
    if (eval->count("--cache-dir")) config.cache_dir = eval_cache;
    if (config.model_id.empty()) config.model_id = "eval";
    if (eval_no_append) config.scores_path.clear();
    const double score = resadapt::cmd_eval(eval_ckpt, eval_manifest,
                                            eval_partition, config, eval_seed);
    std::printf("UAR %.6f\n", score);
  });

  // ---- aso ----
  auto* aso_cmd = app.add_subcommand(
      "aso", "Almost Stochastic Order test between two models");
  std::string aso_scores, aso_a, aso_b, aso_corpus;
  double aso_alpha = 0.05;
  int aso_adjust = 1, aso_bootstrap = 1000;
  aso_cmd->add_option("model_a", aso_a, "candidate model id")->required();
  aso_cmd->add_option("model_b", aso_b, "baseline model id")->required();
  aso_cmd->add_option("--scores", aso_scores, "JSONL score file")->required();
  aso_cmd->add_option("--corpus", aso_corpus,
                      "corpus id (optional when the file has exactly one)");
  aso_cmd->add_option("--alpha", aso_alpha, "significance level");
  aso_cmd->add_option("--adjust-n", aso_adjust,
                      "divide alpha by this comparison count");
  aso_cmd->add_option("--bootstrap", aso_bootstrap, "bootstrap resamples");
  aso_cmd->callback([&] {
    const auto result = resadapt::cmd_aso(aso_scores, aso_a, aso_b, aso_corpus,
                                          aso_alpha, aso_adjust, aso_bootstrap);
    std::printf("eps_min=%.6f point_estimate=%.6f alpha_used=%.8f "
                "dominant=%s\n",
                result.eps_min, result.point_estimate, result.alpha_used,
                result.dominant() ? "true" : "false");
  });

  // ---- dominance ----
  auto* dominance = app.add_subcommand(
      "dominance", "Pairwise mean eps_min matrix over all models");
  std::string dom_scores, dom_out;
  double dom_alpha = 0.05;
  int dom_bootstrap = 1000;
  dominance->add_option("--scores", dom_scores, "JSONL score file")
      ->required();
  dominance->add_option("--out", dom_out, "output CSV path")->required();
  dominance->add_option("--alpha", dom_alpha,
                        "significance level before the corpus-count "
                        "adjustment");
  dominance->add_option("--bootstrap", dom_bootstrap, "bootstrap resamples");
  dominance->callback([&] {
    const auto matrix =
        resadapt::cmd_dominance(dom_scores, dom_alpha, dom_out, dom_bootstrap);
    std::printf("model");
    for (const auto& id : matrix.model_ids) std::printf(",%s", id.c_str());
    std::printf("\n");
    for (std::size_t i = 0; i < matrix.model_ids.size(); ++i) {
      std::printf("%s", matrix.model_ids[i].c_str());
      for (std::size_t j = 0; j < matrix.model_ids.size(); ++j)
        std::printf(",%.6f", matrix.at(i, j));
      std::printf("\n");
    }
  });

  // ---- synth ----
  auto* synth = app.add_subcommand(
      "synth", "Generate deterministic synthetic corpora");
  std::string synth_out;
  int synth_corpora = 1, synth_classes = 4, synth_samples = 10;
  std::uint64_t synth_seed = 0;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--corpora", synth_corpora, "number of corpora");
  synth->add_option("--classes", synth_classes, "classes per corpus (<= 8)");
  synth->add_option("--samples-per-class", synth_samples,
                    "clips per class and corpus");
  synth->add_option("--seed", synth_seed, "generation seed");
  synth->callback([&] {
    const auto manifests = resadapt::cmd_synth(
        synth_out, synth_corpora, synth_classes, synth_samples, synth_seed);
    for (const auto& path : manifests) std::printf("%s\n", path.c_str());
  });

  // ---- dump-config ----
  auto* dump = app.add_subcommand(
      "dump-config", "Print the effective config (re-ingestable)");
  CommonOpts dump_common;
  dump_common.attach(dump);
  dump->callback([&] {
    std::cout << resadapt::dump_run_config(dump_common.build());
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // pin usage errors to exit code 1
  } catch (const resadapt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const resadapt::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const resadapt::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
