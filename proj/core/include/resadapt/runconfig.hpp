#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "resadapt/model.hpp"
#include "resadapt/trainer.hpp"

namespace resadapt {

// Everything a run needs, assembled from defaults, an optional key=value
// config file, and flag overrides (in that order; later wins).
struct RunConfig {
  TrainConfig train;
  ArchitectureSpec arch;

  std::vector<std::string> manifests;  // corpus manifest CSV paths
  std::string cache_dir;               // feature cache root
  std::string checkpoint_dir = "checkpoints";
  std::string scores_path = "scores.jsonl";
  std::string records_dir = "runs";
  std::string av_mapping_path;  // empty: built-in arousal/valence table
  std::string av_aliases_path;  // empty: no aliases

  std::string regime = "scratch";
  std::string model_id;          // empty: derived from the regime name
  std::string seeds = "0";       // "0", "0,1,2", or "0..9"
  std::string from_checkpoint;   // pretrained bundle for transfer regimes
  std::string target = "both";   // aggregate-av: arousal | valence | both
};

// Defaults, with cache_dir taken from $RESADAPT_CACHE when set
// (else "cache").
RunConfig default_run_config();

// Applies one dotted key. Unknown keys and unparsable values throw
// ConfigError.
void apply_key_value(RunConfig& config, const std::string& key,
                     const std::string& value);

// Parses a "key = value" file ('#' comments and blank lines allowed) on
// top of `base`.
RunConfig load_run_config(const std::string& path, const RunConfig& base);

// Full key=value listing; feeding it back through load_run_config
// reproduces the same config.
std::string dump_run_config(const RunConfig& config);

// "7" -> {7}; "0,2,5" -> {0,2,5}; "0..9" -> {0,...,9}.
std::vector<std::uint64_t> parse_seed_list(const std::string& text);

}  // namespace resadapt
