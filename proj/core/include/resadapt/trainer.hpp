#pragma once

#include <string>
#include <vector>

#include "resadapt/corpus.hpp"
#include "resadapt/model.hpp"

namespace resadapt {

struct TrainConfig {
  int batch_size = 64;
  double momentum = 0.9;
  std::vector<double> lr_stages{0.1, 0.01, 0.001};
  double per_update_decay = 1e-6;
  int patience_epochs = 50;
  int round_robin_steps_per_stage = 2500;
  double head_only_initial_lr = 0.01;
  std::uint64_t seed = 0;
  // Desk-scale controls: hard epoch cap and an optional dev-UAR early
  // stop (disabled when negative).
  int max_epochs = 1000;
  double target_dev_uar = -1.0;
  int dev_eval_every_rounds = 250;

  void validate() const;  // throws ConfigError
};

enum class PlateauAction { Continue, StepLr, Stop };

// Steps down (restoring best weights first, which the caller performs)
// when the best dev UAR, or the last stage change at anchor_index, is at
// least `patience` evaluations old. Stops instead when no stages remain.
PlateauAction plateau_controller(const std::vector<double>& dev_uar_history,
                                 int patience, int stages_remaining,
                                 int anchor_index = 0);

// stage_lr * (1 - per_update_decay)^t, t counting updates within the run.
double effective_lr(double stage_lr, std::int64_t update_index,
                    double per_update_decay = 1e-6);

struct RunRecord {
  std::string regime;
  std::string corpus_id;
  std::uint64_t seed = 0;
  std::vector<double> dev_uar_trace;
  std::vector<double> stage_lr_trace;  // stage lr in effect per evaluation
  double final_dev_uar = 0.0;   // best dev UAR (the restored weights)
  double final_test_uar = 0.0;  // evaluated once from the final weights
  std::string checkpoint_path;
};
void save_run_record(const RunRecord& record, const std::string& path);

// In-memory dataset: features loaded from the cache, labels as indices
// into the corpus label space.
struct PreparedPartition {
  std::vector<Tensor> mels;
  std::vector<std::int64_t> labels;
  bool empty() const { return mels.empty(); }
  std::size_t size() const { return mels.size(); }
};

struct PreparedCorpus {
  std::string corpus_id;
  std::vector<std::string> label_space;
  PreparedPartition train, dev, test;
  std::int64_t n_classes() const {
    return static_cast<std::int64_t>(label_space.size());
  }
};

// Cache location of one clip's features: <cache_dir>/<corpus_id>/<stem>-
// <8-hex path hash>. The hash keeps colliding stems apart.
std::string feature_cache_base(const std::string& cache_dir,
                               const std::string& corpus_id,
                               const std::string& audio_path);

// Loads every sample's cached features; missing cache entries are an
// error naming the audio file.
PreparedCorpus prepare_corpus(const CorpusManifest& manifest,
                              const std::string& cache_dir);

// Maps labels onto arousal (low/high) or valence (negative/neutral/
// positive), balance-subsamples every corpus and partition independently,
// and merges the result into one corpus named "av-<target>".
PreparedCorpus aggregate_av(const std::vector<PreparedCorpus>& corpora,
                            const std::string& target,  // arousal | valence
                            const AvMapping& mapping, std::uint64_t seed);

// Eval-mode UAR over one partition.
double evaluate(ModelBundle& bundle, const PreparedPartition& part,
                const std::string& domain_id, int batch_size);

// Epoch training with the plateau schedule. regime selects the trainable
// set; head_only starts at head_only_initial_lr. Returns the record; the
// bundle holds the restored best-dev weights afterwards.
RunRecord train_single(ModelBundle& bundle, const PreparedCorpus& corpus,
                       Regime regime, const TrainConfig& config,
                       const std::string& domain_id);

// Fixed round-robin schedule: the lr stage of one round, with boundaries
// at every multiple of steps_per_stage (2500 and 5000 under the
// defaults), and the stopping round (7500 under the defaults).
int multidomain_stage(int round, int steps_per_stage, int n_stages);
int multidomain_total_rounds(int steps_per_stage, int n_stages);

// Round-robin over all corpora in registration order, one batch each per
// round, following the fixed schedule above. A batch from corpus d
// updates shared parameters plus d's specifics only.
std::vector<RunRecord> train_multidomain(
    ModelBundle& bundle, const std::vector<PreparedCorpus>& corpora,
    const TrainConfig& config);

struct AggregatedResult {
  ModelBundle bundle;
  std::vector<RunRecord> records;
};

// target: arousal | valence | both. Builds the model, maps and balances
// the corpora, and trains (round-robin across the two tasks for "both").
AggregatedResult train_aggregated(const std::vector<PreparedCorpus>& corpora,
                                  const std::string& target,
                                  const AvMapping& mapping,
                                  const ArchitectureSpec& arch,
                                  const TrainConfig& config);

// Reinitializes the target domain, then runs adapters_and_head training.
// Shared parameters are frozen throughout (checksum-verified by tests).
RunRecord transfer_from(ModelBundle& pretrained, const PreparedCorpus& target,
                        const TrainConfig& config);

}  // namespace resadapt
