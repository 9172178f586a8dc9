#include "resadapt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "resadapt/dsp.hpp"
#include "resadapt/stats.hpp"

namespace resadapt {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("momentum must be in [0,1)");
  if (lr_stages.empty()) throw ConfigError("lr_stages must be non-empty");
  for (std::size_t i = 0; i < lr_stages.size(); ++i) {
    if (lr_stages[i] <= 0.0) throw ConfigError("lr stages must be positive");
    if (i > 0 && lr_stages[i] >= lr_stages[i - 1])
      throw ConfigError("lr_stages must be strictly decreasing");
  }
  if (per_update_decay < 0.0 || per_update_decay >= 1.0)
    throw ConfigError("per_update_decay must be in [0,1)");
  if (patience_epochs < 1) throw ConfigError("patience_epochs must be >= 1");
  if (round_robin_steps_per_stage < 1)
    throw ConfigError("round_robin_steps_per_stage must be >= 1");
  if (head_only_initial_lr <= 0.0)
    throw ConfigError("head_only_initial_lr must be positive");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (dev_eval_every_rounds < 1)
    throw ConfigError("dev_eval_every_rounds must be >= 1");
}

PlateauAction plateau_controller(const std::vector<double>& dev_uar_history,
                                 int patience, int stages_remaining,
                                 int anchor_index) {
  if (dev_uar_history.empty())
    throw std::invalid_argument("plateau_controller: empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < dev_uar_history.size(); ++i)
    if (dev_uar_history[i] > dev_uar_history[best]) best = i;
  const std::int64_t last =
      static_cast<std::int64_t>(dev_uar_history.size()) - 1;
  const std::int64_t floor_index =
      std::max<std::int64_t>(static_cast<std::int64_t>(best), anchor_index);
  if (last - floor_index < patience) return PlateauAction::Continue;
  return stages_remaining > 1 ? PlateauAction::StepLr : PlateauAction::Stop;
}

int multidomain_stage(int round, int steps_per_stage, int n_stages) {
  if (steps_per_stage < 1 || n_stages < 1)
    throw ConfigError("schedule needs steps_per_stage >= 1 and >= 1 stage");
  return std::min(round / steps_per_stage, n_stages - 1);
}

int multidomain_total_rounds(int steps_per_stage, int n_stages) {
  if (steps_per_stage < 1 || n_stages < 1)
    throw ConfigError("schedule needs steps_per_stage >= 1 and >= 1 stage");
  return steps_per_stage * n_stages;
}

double effective_lr(double stage_lr, std::int64_t update_index,
                    double per_update_decay) {
  return stage_lr * std::pow(1.0 - per_update_decay,
                             static_cast<double>(update_index));
}

void save_run_record(const RunRecord& record, const std::string& path) {
  nlohmann::json j{{"regime", record.regime},
                   {"corpus_id", record.corpus_id},
                   {"seed", record.seed},
                   {"dev_uar_trace", record.dev_uar_trace},
                   {"stage_lr_trace", record.stage_lr_trace},
                   {"final_dev_uar", record.final_dev_uar},
                   {"final_test_uar", record.final_test_uar},
                   {"checkpoint_path", record.checkpoint_path}};
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write run record: " + path);
  f << j.dump(2) << "\n";
}

std::string feature_cache_base(const std::string& cache_dir,
                               const std::string& corpus_id,
                               const std::string& audio_path) {
  namespace fs = std::filesystem;
  std::string stem = fs::path(audio_path).stem().string();
  if (stem.empty()) stem = "clip";
  char hash[17];
  std::snprintf(hash, sizeof(hash), "%08llx",
                static_cast<unsigned long long>(fnv1a64(audio_path) &
                                                0xffffffffull));
  return (fs::path(cache_dir) / corpus_id / (stem + "-" + hash)).string();
}

PreparedCorpus prepare_corpus(const CorpusManifest& manifest,
                              const std::string& cache_dir) {
  PreparedCorpus out;
  out.corpus_id = manifest.corpus_id;
  out.label_space = manifest.label_space;
  for (const auto& sample : manifest.samples) {
    const std::string base =
        feature_cache_base(cache_dir, manifest.corpus_id, sample.audio_path);
    if (!feature_exists(base))
      throw DataError("feature cache missing for " + sample.audio_path +
                      " (run the features command first)");
    FeatureSample fs = load_feature(base);
    PreparedPartition& part = sample.partition == "train" ? out.train
                              : sample.partition == "dev" ? out.dev
                                                          : out.test;
    part.mels.push_back(std::move(fs.mel));
    part.labels.push_back(manifest.label_index(sample.label));
  }
  return out;
}

PreparedCorpus aggregate_av(const std::vector<PreparedCorpus>& corpora,
                            const std::string& target,
                            const AvMapping& mapping, std::uint64_t seed) {
  if (corpora.empty()) throw ConfigError("aggregate_av: no corpora");
  const bool arousal = target == "arousal";
  if (!arousal && target != "valence")
    throw ConfigError("aggregate_av target must be arousal or valence");

  PreparedCorpus out;
  out.corpus_id = "av-" + target;
  out.label_space = arousal
                        ? std::vector<std::string>{"low", "high"}
                        : std::vector<std::string>{"negative", "neutral",
                                                   "positive"};
  auto av_index = [&](const std::string& label) {
    const auto [a, v] = map_to_av(label, mapping);
    const std::string& cls = arousal ? a : v;
    for (std::size_t i = 0; i < out.label_space.size(); ++i)
      if (out.label_space[i] == cls) return static_cast<std::int64_t>(i);
    throw DataError("unexpected av class: " + cls);
  };

  for (const auto& corpus : corpora) {
    Rng corpus_rng =
        Rng(seed).split("subsample:" + target + ":" + corpus.corpus_id);
    const std::pair<const PreparedPartition*, PreparedPartition*> parts[] = {
        {&corpus.train, &out.train},
        {&corpus.dev, &out.dev},
        {&corpus.test, &out.test}};
    const char* part_names[] = {"train", "dev", "test"};
    for (std::size_t p = 0; p < 3; ++p) {
      const PreparedPartition& src = *parts[p].first;
      PreparedPartition& dst = *parts[p].second;
      std::vector<std::int64_t> mapped(src.size());
      for (std::size_t i = 0; i < src.size(); ++i)
        mapped[i] = av_index(
            corpus.label_space[static_cast<std::size_t>(src.labels[i])]);
      Rng part_rng = corpus_rng.split(part_names[p]);
      const auto keep = balanced_subsample(src.size(), mapped, part_rng);
      for (const std::size_t i : keep) {
        dst.mels.push_back(src.mels[i]);
        dst.labels.push_back(mapped[i]);
      }
    }
  }
  return out;
}

double evaluate(ModelBundle& bundle, const PreparedPartition& part,
                const std::string& domain_id, int batch_size) {
  if (part.empty()) throw DataError("evaluate: empty partition");
  const std::int64_t n_classes = bundle.domain(domain_id).n_classes;
  std::vector<std::int64_t> predictions, labels;
  const ForwardOptions options;  // eval mode
  for (std::size_t start = 0; start < part.size();
       start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end =
        std::min(part.size(), start + static_cast<std::size_t>(batch_size));
    std::int64_t w_max = 1;
    const std::int64_t n_mels = part.mels[start].shape[0];
    for (std::size_t i = start; i < end; ++i)
      w_max = std::max(w_max, part.mels[i].shape[1]);
    Tensor features({static_cast<std::int64_t>(end - start), 1, n_mels,
                     w_max});
    std::vector<std::int64_t> lengths;
    for (std::size_t i = start; i < end; ++i) {
      const Tensor& mel = part.mels[i];
      lengths.push_back(mel.shape[1]);
      const std::int64_t k = static_cast<std::int64_t>(i - start);
      for (std::int64_t r = 0; r < n_mels; ++r)
        std::copy(mel.data.begin() + r * mel.shape[1],
                  mel.data.begin() + (r + 1) * mel.shape[1],
                  features.data.begin() + (k * n_mels + r) * w_max);
    }
    const Tensor logits =
        forward(bundle, features, lengths, domain_id, options);
    for (std::int64_t i = 0; i < logits.shape[0]; ++i) {
      std::int64_t arg = 0;
      for (std::int64_t c = 1; c < logits.shape[1]; ++c)
        if (logits.at2(i, c) > logits.at2(i, arg)) arg = c;
      predictions.push_back(arg);
      labels.push_back(part.labels[start + static_cast<std::size_t>(i)]);
    }
  }
  return uar(predictions, labels, n_classes);
}

namespace {

// Velocity buffers plus the masked momentum update, shared by both
// training drivers.
struct Optimizer {
  std::vector<ParamRef<float>> index;
  std::vector<std::vector<float>> velocity;

  explicit Optimizer(ModelBundle& bundle) : index(param_index(bundle)) {
    velocity.resize(index.size());
    for (std::size_t i = 0; i < index.size(); ++i)
      velocity[i].assign(index[i].tensor->data.size(), 0.0f);
  }

  void reset_velocity() {
    for (auto& v : velocity) std::fill(v.begin(), v.end(), 0.0f);
  }

  void step(const std::vector<std::uint8_t>& mask, double lr,
            double momentum) {
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (!mask[i] || index[i].is_state) continue;
      TensorT<float>& p = *index[i].tensor;
      if (p.grad.empty()) continue;  // parameter unused by this pass
      sgd_momentum_step(p.data, p.grad, velocity[i], static_cast<float>(lr),
                        static_cast<float>(momentum), 0.0f);
    }
  }
};

// One optimization step on one batch: forward, loss, backward, update.
double train_step(ModelBundle& bundle, const Batch& batch,
                  const std::string& domain_id, bool update_trunk_bn,
                  Rng& dropout_rng, Optimizer& opt,
                  const std::vector<std::uint8_t>& mask, double lr,
                  double momentum) {
  zero_all_grads(bundle);
  ForwardOptions options;
  options.mode = Mode::Train;
  options.update_trunk_bn = update_trunk_bn;
  options.dropout_rng = &dropout_rng;
  ForwardTrace<float> trace;
  const Tensor logits = forward(bundle, batch.features, batch.lengths,
                                domain_id, options, &trace);
  auto [loss, grad_logits] = softmax_xent(logits, batch.labels);
  if (!std::isfinite(loss))
    throw NumericError("non-finite training loss");
  backward(bundle, trace, grad_logits, domain_id);
  opt.step(mask, lr, momentum);
  return loss;
}

std::vector<double> stages_for(Regime regime, const TrainConfig& config) {
  if (regime != Regime::HeadOnly) return config.lr_stages;
  // head-only transfer starts at the reduced rate, then follows the
  // remaining (smaller) stages
  std::vector<double> stages{config.head_only_initial_lr};
  for (const double lr : config.lr_stages)
    if (lr < config.head_only_initial_lr) stages.push_back(lr);
  return stages;
}

}  // namespace

RunRecord train_single(ModelBundle& bundle, const PreparedCorpus& corpus,
                       Regime regime, const TrainConfig& config,
                       const std::string& domain_id) {
  config.validate();
  if (regime == Regime::SharedMultidomain)
    throw ConfigError("train_single does not run the multidomain regime");
  if (corpus.train.empty())
    throw DataError("empty train partition: " + corpus.corpus_id);
  if (corpus.dev.empty())
    throw DataError("empty dev partition: " + corpus.corpus_id);
  if (bundle.domain(domain_id).n_classes != corpus.n_classes())
    throw DataError("domain " + domain_id + " expects " +
                    std::to_string(bundle.domain(domain_id).n_classes) +
                    " classes, corpus has " +
                    std::to_string(corpus.n_classes()));

  const std::vector<double> stages = stages_for(regime, config);
  const auto mask = trainable_mask(bundle, regime, domain_id);
  const bool update_trunk_bn = regime != Regime::HeadOnly;
  Optimizer opt(bundle);
  Rng root(config.seed);

  RunRecord record;
  record.regime = regime_name(regime);
  record.corpus_id = corpus.corpus_id;
  record.seed = config.seed;

  std::size_t stage = 0;
  std::int64_t t = 0;  // update counter within the run
  double best_dev = -1.0;
  std::vector<std::vector<float>> best_snapshot = snapshot_params(bundle);
  int anchor = 0;

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    Rng epoch_rng = root.split("epoch:" + std::to_string(epoch));
    Rng shuffle_rng = epoch_rng.split("shuffle");
    Rng dropout_rng = epoch_rng.split("dropout");
    const auto batches =
        make_batches(corpus.train.mels, corpus.train.labels, domain_id,
                     config.batch_size, shuffle_rng);
    for (const Batch& batch : batches) {
      const double lr =
          effective_lr(stages[stage], t, config.per_update_decay);
      train_step(bundle, batch, domain_id, update_trunk_bn, dropout_rng, opt,
                 mask, lr, config.momentum);
      ++t;
    }

    const double dev = evaluate(bundle, corpus.dev, domain_id,
                                config.batch_size);
    record.dev_uar_trace.push_back(dev);
    record.stage_lr_trace.push_back(stages[stage]);
    if (dev > best_dev) {
      best_dev = dev;
      best_snapshot = snapshot_params(bundle);
    }
    if (config.target_dev_uar > 0.0 && dev >= config.target_dev_uar) break;

    const PlateauAction action = plateau_controller(
        record.dev_uar_trace, config.patience_epochs,
        static_cast<int>(stages.size() - stage), anchor);
    if (action == PlateauAction::StepLr) {
      restore_params(bundle, best_snapshot);
      opt.reset_velocity();
      ++stage;
      anchor = static_cast<int>(record.dev_uar_trace.size()) - 1;
    } else if (action == PlateauAction::Stop) {
      break;
    }
  }

  restore_params(bundle, best_snapshot);
  record.final_dev_uar = best_dev;
  record.final_test_uar =
      corpus.test.empty()
          ? 0.0
          : evaluate(bundle, corpus.test, domain_id, config.batch_size);
  return record;
}

std::vector<RunRecord> train_multidomain(
    ModelBundle& bundle, const std::vector<PreparedCorpus>& corpora,
    const TrainConfig& config) {
  config.validate();
  if (corpora.size() < 2)
    throw ConfigError("multidomain training needs >= 2 corpora");
  for (const auto& corpus : corpora) {
    if (corpus.train.empty())
      throw DataError("empty train partition: " + corpus.corpus_id);
    if (corpus.dev.empty())
      throw DataError("empty dev partition: " + corpus.corpus_id);
    if (bundle.domain(corpus.corpus_id).n_classes != corpus.n_classes())
      throw DataError("domain/corpus class mismatch: " + corpus.corpus_id);
  }

  const std::size_t n_domains = corpora.size();
  std::vector<std::vector<std::uint8_t>> masks;
  for (const auto& corpus : corpora)
    masks.push_back(trainable_mask(bundle, Regime::SharedMultidomain,
                                   corpus.corpus_id));
  Optimizer opt(bundle);
  Rng root(config.seed);

  // Per-corpus cycling batch streams, reshuffled on exhaustion.
  struct Stream {
    std::vector<Batch> batches;
    std::size_t cursor = 0;
    int epoch = 0;
  };
  std::vector<Stream> streams(n_domains);
  std::vector<Rng> dropout_rngs;
  for (std::size_t d = 0; d < n_domains; ++d)
    dropout_rngs.push_back(root.split("dropout:" + corpora[d].corpus_id));
  auto next_batch = [&](std::size_t d) -> const Batch& {
    Stream& s = streams[d];
    if (s.cursor >= s.batches.size()) {
      Rng shuffle_rng = root.split("shuffle:" + corpora[d].corpus_id + ":" +
                                   std::to_string(s.epoch));
      s.batches = make_batches(corpora[d].train.mels, corpora[d].train.labels,
                               corpora[d].corpus_id, config.batch_size,
                               shuffle_rng);
      s.cursor = 0;
      ++s.epoch;
    }
    return s.batches[s.cursor++];
  };

  std::vector<RunRecord> records(n_domains);
  for (std::size_t d = 0; d < n_domains; ++d) {
    records[d].regime = regime_name(Regime::SharedMultidomain);
    records[d].corpus_id = corpora[d].corpus_id;
    records[d].seed = config.seed;
  }

  const int n_stages = static_cast<int>(config.lr_stages.size());
  const int total_rounds = multidomain_total_rounds(
      config.round_robin_steps_per_stage, n_stages);
  std::int64_t t = 0;
  for (int round = 0; round < total_rounds; ++round) {
    const std::size_t stage = static_cast<std::size_t>(multidomain_stage(
        round, config.round_robin_steps_per_stage, n_stages));
    for (std::size_t d = 0; d < n_domains; ++d) {
      const double lr = effective_lr(config.lr_stages[stage], t,
                                     config.per_update_decay);
      train_step(bundle, next_batch(d), corpora[d].corpus_id,
                 /*update_trunk_bn=*/true, dropout_rngs[d], opt, masks[d], lr,
                 config.momentum);
      ++t;
    }
    if ((round + 1) % config.dev_eval_every_rounds == 0 ||
        round + 1 == total_rounds) {
      for (std::size_t d = 0; d < n_domains; ++d) {
        records[d].dev_uar_trace.push_back(evaluate(
            bundle, corpora[d].dev, corpora[d].corpus_id, config.batch_size));
        records[d].stage_lr_trace.push_back(config.lr_stages[stage]);
      }
    }
  }

  // Test UAR comes from the final weights; downstream use finetunes per
  // task afterwards, so no per-domain best restoration happens here.
  for (std::size_t d = 0; d < n_domains; ++d) {
    records[d].final_dev_uar = records[d].dev_uar_trace.empty()
                                   ? 0.0
                                   : records[d].dev_uar_trace.back();
    records[d].final_test_uar =
        corpora[d].test.empty()
            ? 0.0
            : evaluate(bundle, corpora[d].test, corpora[d].corpus_id,
                       config.batch_size);
  }
  return records;
}

AggregatedResult train_aggregated(const std::vector<PreparedCorpus>& corpora,
                                  const std::string& target,
                                  const AvMapping& mapping,
                                  const ArchitectureSpec& arch,
                                  const TrainConfig& config) {
  config.validate();
  if (corpora.empty()) throw ConfigError("train_aggregated: no corpora");
  AggregatedResult result;
  if (target == "arousal" || target == "valence") {
    PreparedCorpus agg = aggregate_av(corpora, target, mapping, config.seed);
    result.bundle = build_model<float>(
        arch, {{agg.corpus_id, agg.n_classes()}}, config.seed);
    result.records.push_back(train_single(result.bundle, agg, Regime::Scratch,
                                          config, agg.corpus_id));
  } else if (target == "both") {
    PreparedCorpus arousal = aggregate_av(corpora, "arousal", mapping,
                                          config.seed);
    PreparedCorpus valence = aggregate_av(corpora, "valence", mapping,
                                          config.seed);
    result.bundle = build_model<float>(
        arch,
        {{arousal.corpus_id, arousal.n_classes()},
         {valence.corpus_id, valence.n_classes()}},
        config.seed);
    result.records =
        train_multidomain(result.bundle, {arousal, valence}, config);
  } else {
    throw ConfigError("aggregate target must be arousal, valence, or both");
  }
  return result;
}

RunRecord transfer_from(ModelBundle& pretrained, const PreparedCorpus& target,
                        const TrainConfig& config) {
  reinitialize_domain(pretrained, target.corpus_id, target.n_classes(),
                      Rng(config.seed).split("transfer:" + target.corpus_id)
                          .seed());
  return train_single(pretrained, target, Regime::AdaptersAndHead, config,
                      target.corpus_id);
}

}  // namespace resadapt
