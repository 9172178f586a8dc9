#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "resadapt/rng.hpp"
#include "resadapt/tensor.hpp"

namespace resadapt {

struct SampleEntry {
  std::string audio_path;
  std::string label;
  std::string speaker;    // may be empty
  std::string partition;  // train | dev | test
};

struct CorpusManifest {
  std::string corpus_id;
  std::vector<SampleEntry> samples;
  std::vector<std::string> label_space;  // ordered unique label names

  std::int64_t n_classes() const {
    return static_cast<std::int64_t>(label_space.size());
  }
  // Index of a label in label_space; throws on unknown labels.
  std::int64_t label_index(const std::string& label) const;
  // Indices of samples in the given partition, manifest order.
  std::vector<std::size_t> partition_indices(const std::string& part) const;
};

// CSV with header corpus_id,audio_path,label,speaker,partition. Fields may
// not contain commas. Validates: single corpus_id, known partition tags,
// unique audio paths, non-empty label space, and pairwise-disjoint speaker
// sets across partitions when speakers are present.
CorpusManifest load_manifest(const std::string& path);
void save_manifest(const CorpusManifest& manifest, const std::string& path);

// Arousal (low/high) and valence (negative/neutral/positive) lookup for
// categorical emotion labels, plus an alias layer for corpus-specific
// spelling variants.
struct AvMapping {
  std::map<std::string, std::pair<std::string, std::string>> table;
  std::map<std::string, std::string> aliases;  // variant -> table label
};

// The built-in category table.
AvMapping builtin_av_mapping();
// CSV label,arousal,valence (header required).
AvMapping load_av_mapping(const std::string& csv_path);
// CSV label,canonical (header required); adds rows to mapping.aliases.
void load_aliases(AvMapping& mapping, const std::string& csv_path);

// Exact lookup (through aliases); unmapped labels are an error.
std::pair<std::string, std::string> map_to_av(const std::string& label,
                                              const AvMapping& mapping);

// Uniformly subsamples (without replacement) so every class present in
// `samples` keeps exactly the minority class count. Returns indices into
// `samples` in ascending order. class_of maps a sample index to its class.
std::vector<std::size_t> balanced_subsample(
    std::size_t n_samples,
    const std::vector<std::int64_t>& class_of, Rng& rng);

struct Batch {
  Tensor features;  // [N, 1, 64, W_max], zero-padded on the right
  std::vector<std::int64_t> lengths;  // true frame counts
  std::vector<std::int64_t> labels;
  std::string domain_id;
};

// Shuffles sample order with rng and packs consecutive runs of batch_size.
// The last batch may be short; a trailing singleton is avoided (when more
// than one sample exists) by moving one sample from the previous batch, so
// train-mode batch statistics are always well defined.
std::vector<Batch> make_batches(const std::vector<Tensor>& mels,
                                const std::vector<std::int64_t>& labels,
                                const std::string& domain_id, int batch_size,
                                Rng& rng);

struct SynthSpec {
  std::string corpus_id = "synth";
  int n_classes = 4;
  int samples_per_class = 10;
  double tone_amplitude = 0.3;
  double noise_amplitude = 0.1;
};

// Deterministic synthetic test corpus: class k is a 400*(k+1) Hz tone over
// low-passed noise, durations uniform in [1 s, 3 s], ten synthetic
// speakers split 6/2/2 across train/dev/test. Writes WAVs plus
// manifest.csv under out_dir/<corpus_id>/ and returns the manifest.
CorpusManifest generate_synthetic_corpus(const SynthSpec& spec,
                                         const std::string& out_dir,
                                         std::uint64_t seed);

// Labels used by generate_synthetic_corpus, all present in the built-in
// arousal/valence table.
const std::vector<std::string>& synthetic_label_names();

}  // namespace resadapt
