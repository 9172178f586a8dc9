#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resadapt/runconfig.hpp"
#include "resadapt/stats.hpp"
#include "resadapt/trainer.hpp"

namespace resadapt {

// Library bodies of the CLI subcommands, so integration tests can drive
// them without spawning a process.

struct FeaturesResult {
  int written = 0;
  int skipped = 0;
};

// Extracts and caches features for every manifest sample. Existing cache
// entries are skipped unless force is set. The chunking rng of each clip
// is derived from (seed, audio path), so reruns and reorderings agree.
FeaturesResult cmd_features(const std::string& manifest_path,
                            const RunConfig& config, std::uint64_t seed,
                            bool force);

// Dispatches on config.regime: scratch | head_only | adapters_and_head
// (the latter two load config.from_checkpoint first) over every manifest
// and every seed in config.seeds; shared_multidomain trains all manifests
// jointly per seed. Writes checkpoints, run records, and score lines.
std::vector<RunRecord> cmd_train(const RunConfig& config);

// Arousal/valence aggregation across all manifests. target comes from
// config.target (arousal | valence | both).
std::vector<RunRecord> cmd_train_aggregate_av(const RunConfig& config);

// Eval-mode UAR of one checkpoint on one manifest partition. Appends a
// score line when config.scores_path is non-empty.
double cmd_eval(const std::string& checkpoint_path,
                const std::string& manifest_path,
                const std::string& partition, const RunConfig& config,
                std::uint64_t seed);

// ASO of model_a over model_b on one corpus from the score file. An empty
// corpus_id is allowed when the file holds exactly one corpus. alpha is
// divided by adjust_n before testing.
AsoResult cmd_aso(const std::string& scores_path, const std::string& model_a,
                  const std::string& model_b, const std::string& corpus_id,
                  double alpha, int adjust_n, int n_bootstrap = 1000);

// Full pairwise dominance matrix from the score file, written as CSV.
DominanceMatrix cmd_dominance(const std::string& scores_path, double alpha,
                              const std::string& out_csv,
                              int n_bootstrap = 1000);

// Generates n_corpora synthetic corpora (synth0, synth1, ...) under
// out_dir and returns their manifest paths.
std::vector<std::string> cmd_synth(const std::string& out_dir, int n_corpora,
                                   int n_classes, int samples_per_class,
                                   std::uint64_t seed);

}  // namespace resadapt
