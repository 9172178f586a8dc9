#include "resadapt/commands.hpp"

#include <filesystem>
#include <set>

#include "resadapt/dsp.hpp"
#include "resadapt/wav.hpp"

namespace fs = std::filesystem;

namespace resadapt {

namespace {

void ensure_dir(const std::string& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir + ": " + ec.message());
}

void ensure_parent_dir(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
}

std::string default_model_id(const RunConfig& config) {
  if (!config.model_id.empty()) return config.model_id;
  return config.regime;
}

AvMapping resolve_av_mapping(const RunConfig& config) {
  AvMapping mapping = config.av_mapping_path.empty()
                          ? builtin_av_mapping()
                          : load_av_mapping(config.av_mapping_path);
  if (!config.av_aliases_path.empty())
    load_aliases(mapping, config.av_aliases_path);
  return mapping;
}

std::vector<PreparedCorpus> prepare_all(const RunConfig& config) {
  if (config.manifests.empty())
    throw ConfigError("no manifests given (set paths.manifests)");
  std::vector<PreparedCorpus> corpora;
  for (const auto& path : config.manifests)
    corpora.push_back(prepare_corpus(load_manifest(path), config.cache_dir));
  return corpora;
}

void record_run(const RunConfig& config, const std::string& model_id,
                const RunRecord& record) {
  ensure_dir(config.records_dir);
  const std::string base = model_id + "-" + record.corpus_id + "-seed" +
                           std::to_string(record.seed);
  save_run_record(record, config.records_dir + "/" + base + ".json");
  if (config.scores_path.empty()) return;
  ensure_parent_dir(config.scores_path);
  append_score(config.scores_path,
               ScoreRecord{model_id, record.corpus_id, record.seed,
                           record.final_dev_uar, record.final_test_uar});
}

std::string checkpoint_path(const RunConfig& config,
                            const std::string& model_id,
                            const std::string& scope, std::uint64_t seed) {
  return config.checkpoint_dir + "/" + model_id +
         (scope.empty() ? "" : "-" + scope) + "-seed" + std::to_string(seed) +
         ".ckpt";
}

}  // namespace

FeaturesResult cmd_features(const std::string& manifest_path,
                            const RunConfig& config, std::uint64_t seed,
                            bool force) {
  const CorpusManifest manifest = load_manifest(manifest_path);
  Rng root(seed);
  FeaturesResult result;
  for (const auto& sample : manifest.samples) {
    const std::string base = feature_cache_base(
        config.cache_dir, manifest.corpus_id, sample.audio_path);
    if (!force && feature_exists(base)) {
      ++result.skipped;
      continue;
    }
    ensure_parent_dir(base);
    const AudioClip clip = load_wav(sample.audio_path);
    Rng rng = root.split("features:" + sample.audio_path);
    const Tensor mel = extract_features(clip, rng);
    save_feature(base, mel, sample.audio_path, sample.label);
    ++result.written;
  }
  return result;
}

std::vector<RunRecord> cmd_train(const RunConfig& config) {
  const Regime regime = parse_regime(config.regime);
  const std::vector<PreparedCorpus> corpora = prepare_all(config);
  const std::vector<std::uint64_t> seeds = parse_seed_list(config.seeds);
  const std::string model_id = default_model_id(config);
  ensure_dir(config.checkpoint_dir);

  std::vector<RunRecord> records;

  if (regime == Regime::SharedMultidomain) {
    for (const std::uint64_t seed : seeds) {
      TrainConfig train = config.train;
      train.seed = seed;
      std::vector<std::pair<std::string, std::int64_t>> domains;
      for (const auto& corpus : corpora)
        domains.emplace_back(corpus.corpus_id, corpus.n_classes());
      ModelBundle bundle = build_model<float>(config.arch, domains, seed);
      std::vector<RunRecord> run = train_multidomain(bundle, corpora, train);
      const std::string ckpt = checkpoint_path(config, model_id, "", seed);
      save_checkpoint(bundle, ckpt);
      for (auto& record : run) {
        record.checkpoint_path = ckpt;
        record_run(config, model_id, record);
        records.push_back(std::move(record));
      }
    }
    return records;
  }

  // Single-task regimes: one model per (corpus, seed).
  ModelBundle pretrained;
  const bool needs_base =
      regime == Regime::HeadOnly || regime == Regime::AdaptersAndHead;
  if (needs_base) {
    if (config.from_checkpoint.empty())
      throw ConfigError("regime " + config.regime +
                        " needs a pretrained checkpoint (run.from_checkpoint)");
    pretrained = load_checkpoint(config.from_checkpoint);
  }

  for (const auto& corpus : corpora) {
    for (const std::uint64_t seed : seeds) {
      TrainConfig train = config.train;
      train.seed = seed;
      RunRecord record;
      const std::string ckpt =
          checkpoint_path(config, model_id, corpus.corpus_id, seed);
      if (regime == Regime::Scratch) {
        ModelBundle bundle = build_model<float>(
            config.arch, {{corpus.corpus_id, corpus.n_classes()}}, seed);
        record =
            train_single(bundle, corpus, regime, train, corpus.corpus_id);
        save_checkpoint(bundle, ckpt);
      } else if (regime == Regime::AdaptersAndHead) {
        ModelBundle bundle = pretrained;
        record = transfer_from(bundle, corpus, train);
        save_checkpoint(bundle, ckpt);
      } else {  // HeadOnly
        ModelBundle bundle = pretrained;
        reinitialize_domain(bundle, corpus.corpus_id, corpus.n_classes(),
                            Rng(seed).split("transfer:" + corpus.corpus_id)
                                .seed());
        record =
            train_single(bundle, corpus, regime, train, corpus.corpus_id);
        save_checkpoint(bundle, ckpt);
      }
      record.checkpoint_path = ckpt;
      record_run(config, model_id, record);
      records.push_back(std::move(record));
    }
  }
  return records;
}

std::vector<RunRecord> cmd_train_aggregate_av(const RunConfig& config) {
  const std::vector<PreparedCorpus> corpora = prepare_all(config);
  const std::vector<std::uint64_t> seeds = parse_seed_list(config.seeds);
  const AvMapping mapping = resolve_av_mapping(config);
  const std::string model_id =
      config.model_id.empty() ? "av-" + config.target : config.model_id;
  ensure_dir(config.checkpoint_dir);

  std::vector<RunRecord> records;
  for (const std::uint64_t seed : seeds) {
    TrainConfig train = config.train;
    train.seed = seed;
    AggregatedResult result =
        train_aggregated(corpora, config.target, mapping, config.arch, train);
    const std::string ckpt = checkpoint_path(config, model_id, "", seed);
    save_checkpoint(result.bundle, ckpt);
    for (auto& record : result.records) {
      record.checkpoint_path = ckpt;
      record_run(config, model_id, record);
      records.push_back(std::move(record));
    }
  }
  return records;
}

double cmd_eval(const std::string& checkpoint_path,
                const std::string& manifest_path, const std::string& partition,
                const RunConfig& config, std::uint64_t seed) {
  if (partition != "train" && partition != "dev" && partition != "test")
    throw ConfigError("partition must be train, dev, or test: " + partition);
  ModelBundle bundle = load_checkpoint(checkpoint_path);
  const CorpusManifest manifest = load_manifest(manifest_path);
  if (!bundle.has_domain(manifest.corpus_id))
    throw DataError("checkpoint " + checkpoint_path + " has no domain " +
                    manifest.corpus_id);
  PreparedCorpus corpus = prepare_corpus(manifest, config.cache_dir);
  if (bundle.domain(manifest.corpus_id).n_classes != corpus.n_classes())
    throw DataError("checkpoint domain " + manifest.corpus_id + " has " +
                    std::to_string(bundle.domain(manifest.corpus_id).n_classes) +
                    " classes, manifest has " +
                    std::to_string(corpus.n_classes()));
  const PreparedPartition& part = partition == "train" ? corpus.train
                                  : partition == "dev" ? corpus.dev
                                                       : corpus.test;
  if (part.empty())
    throw DataError("partition " + partition + " of " + manifest.corpus_id +
                    " is empty");
  const double score =
      evaluate(bundle, part, manifest.corpus_id, config.train.batch_size);
  if (!config.scores_path.empty()) {
    ensure_parent_dir(config.scores_path);
    ScoreRecord record{default_model_id(config), manifest.corpus_id, seed,
                       0.0, 0.0};
    (partition == "dev" ? record.dev_uar : record.test_uar) = score;
    append_score(config.scores_path, record);
  }
  return score;
}

AsoResult cmd_aso(const std::string& scores_path, const std::string& model_a,
                  const std::string& model_b, const std::string& corpus_id,
                  double alpha, int adjust_n, int n_bootstrap) {
  const std::vector<ScoreRecord> records = load_scores(scores_path);
  std::string corpus = corpus_id;
  if (corpus.empty()) {
    std::set<std::string> corpora;
    for (const auto& r : records)
      if (r.model_id == model_a || r.model_id == model_b)
        corpora.insert(r.corpus_id);
    if (corpora.size() != 1)
      throw ConfigError("score file covers " +
                        std::to_string(corpora.size()) +
                        " corpora; pick one with --corpus");
    corpus = *corpora.begin();
  }
  const std::vector<double> a = collect_scores(records, model_a, corpus);
  const std::vector<double> b = collect_scores(records, model_b, corpus);
  if (a.size() < 2 || b.size() < 2)
    throw DataError("need at least 2 runs per side on corpus " + corpus +
                    " (found " + std::to_string(a.size()) + " and " +
                    std::to_string(b.size()) + ")");
  const std::string pair_key = model_a + "|" + model_b + "|" + corpus;
  return aso(a, b, bonferroni(alpha, adjust_n), n_bootstrap, 1000,
             fnv1a64(pair_key));
}

DominanceMatrix cmd_dominance(const std::string& scores_path, double alpha,
                              const std::string& out_csv, int n_bootstrap) {
  const DominanceMatrix matrix =
      dominance_matrix(load_scores(scores_path), alpha, n_bootstrap);
  if (!out_csv.empty()) {
    ensure_parent_dir(out_csv);
    save_dominance_csv(matrix, out_csv);
  }
  return matrix;
}

std::vector<std::string> cmd_synth(const std::string& out_dir, int n_corpora,
                                   int n_classes, int samples_per_class,
                                   std::uint64_t seed) {
  if (n_corpora < 1) throw ConfigError("need at least one corpus");
  Rng root(seed);
  std::vector<std::string> manifests;
  for (int c = 0; c < n_corpora; ++c) {
    SynthSpec spec;
    spec.corpus_id = "synth" + std::to_string(c);
    spec.n_classes = n_classes;
    spec.samples_per_class = samples_per_class;
    generate_synthetic_corpus(spec, out_dir,
                              root.split("synth:" + spec.corpus_id).seed());
    manifests.push_back(out_dir + "/" + spec.corpus_id + "/manifest.csv");
  }
  return manifests;
}

}  // namespace resadapt
