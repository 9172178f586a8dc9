#include "resadapt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "resadapt/wav.hpp"

namespace resadapt {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

bool valid_partition(const std::string& p) {
  return p == "train" || p == "dev" || p == "test";
}

}  // namespace

std::int64_t CorpusManifest::label_index(const std::string& label) const {
  for (std::size_t i = 0; i < label_space.size(); ++i)
    if (label_space[i] == label) return static_cast<std::int64_t>(i);
  throw DataError("label not in corpus label space: " + label);
}

std::vector<std::size_t> CorpusManifest::partition_indices(
    const std::string& part) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].partition == part) out.push_back(i);
  return out;
}

CorpusManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  std::string line;
  if (!std::getline(in, line))
    throw DataError("empty manifest: " + path);
  const auto header = split_csv_line(line);
  const std::vector<std::string> expected{"corpus_id", "audio_path", "label",
                                          "speaker", "partition"};
  if (header != expected)
    throw DataError("manifest header must be "
                    "corpus_id,audio_path,label,speaker,partition: " +
                    path);

  CorpusManifest m;
  std::set<std::string> seen_paths;
  std::map<std::string, std::set<std::string>> speakers_by_partition;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != 5)
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected 5 fields");
    const std::string& corpus = fields[0];
    SampleEntry e{fields[1], fields[2], fields[3], fields[4]};
    if (m.corpus_id.empty())
      m.corpus_id = corpus;
    else if (m.corpus_id != corpus)
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": mixed corpus ids (" + m.corpus_id + " vs " + corpus +
                      ")");
    if (!valid_partition(e.partition))
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": unknown partition tag '" + e.partition + "'");
    if (!seen_paths.insert(e.audio_path).second)
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": duplicate audio_path " + e.audio_path);
    if (e.label.empty())
      throw DataError(path + ":" + std::to_string(line_no) + ": empty label");
    if (std::find(m.label_space.begin(), m.label_space.end(), e.label) ==
        m.label_space.end())
      m.label_space.push_back(e.label);
    if (!e.speaker.empty())
      speakers_by_partition[e.partition].insert(e.speaker);
    m.samples.push_back(std::move(e));
  }
  if (m.samples.empty() || m.label_space.empty())
    throw DataError("manifest has no samples: " + path);

  // speaker-independent partitions
  const std::vector<std::string> parts{"train", "dev", "test"};
  for (std::size_t a = 0; a < parts.size(); ++a)
    for (std::size_t b = a + 1; b < parts.size(); ++b) {
      const auto& sa = speakers_by_partition[parts[a]];
      const auto& sb = speakers_by_partition[parts[b]];
      for (const auto& s : sa)
        if (sb.count(s))
          throw DataError("speaker '" + s + "' appears in both " + parts[a] +
                          " and " + parts[b] + ": " + path);
    }
  return m;
}

void save_manifest(const CorpusManifest& manifest, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << "corpus_id,audio_path,label,speaker,partition\n";
  for (const auto& s : manifest.samples)
    out << manifest.corpus_id << ',' << s.audio_path << ',' << s.label << ','
        << s.speaker << ',' << s.partition << '\n';
}

AvMapping builtin_av_mapping() {
  // (label, arousal, valence) categories of the aggregated label space.
  static const struct {
    const char* label;
    const char* arousal;
    const char* valence;
  } kTable[] = {
      // low arousal / negative valence
      {"contempt", "low", "negative"},
      {"disappointment", "low", "negative"},
      {"disgust", "low", "negative"},
      {"frustration", "low", "negative"},
      {"guilt", "low", "negative"},
      {"helplessness", "low", "negative"},
      {"hurt", "low", "negative"},
      {"impatience", "low", "negative"},
      {"irritation", "low", "negative"},
      {"jealousy", "low", "negative"},
      {"sadness", "low", "negative"},
      {"shame", "low", "negative"},
      {"unfriendliness", "low", "negative"},
      {"worry", "low", "negative"},
      // low arousal / neutral valence
      {"boredom", "low", "neutral"},
      {"confusion", "low", "neutral"},
      {"neutral", "low", "neutral"},
      {"pondering", "low", "neutral"},
      {"rest", "low", "neutral"},
      {"sneakiness", "low", "neutral"},
      // low arousal / positive valence
      {"admiration", "low", "positive"},
      {"kindness", "low", "positive"},
      {"pride", "low", "positive"},
      {"relief", "low", "positive"},
      {"tenderness", "low", "positive"},
      // high arousal / negative valence
      {"aggressiveness", "high", "negative"},
      {"anger", "high", "negative"},
      {"anxiety", "high", "negative"},
      {"despair", "high", "negative"},
      {"fear", "high", "negative"},
      {"high-stress", "high", "negative"},
      {"scream", "high", "negative"},
      // high arousal / neutral valence
      {"emphatic", "high", "neutral"},
      {"interest", "high", "neutral"},
      {"intoxication", "high", "neutral"},
      {"medium-stress", "high", "neutral"},
      {"nervousness", "high", "neutral"},
      {"surprise", "high", "neutral"},
      // high arousal / positive valence
      {"amusement", "high", "positive"},
      {"cheerfulness", "high", "positive"},
      {"elation", "high", "positive"},
      {"excitement", "high", "positive"},
      {"happiness", "high", "positive"},
      {"joking", "high", "positive"},
      {"joy", "high", "positive"},
      {"pleasure", "high", "positive"},
      {"positive", "high", "positive"},
  };
  AvMapping m;
  for (const auto& row : kTable)
    m.table.emplace(row.label, std::make_pair(std::string(row.arousal),
                                              std::string(row.valence)));
  return m;
}

AvMapping load_av_mapping(const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open av mapping: " + csv_path);
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line) !=
          std::vector<std::string>{"label", "arousal", "valence"})
    throw DataError("av mapping header must be label,arousal,valence: " +
                    csv_path);
  AvMapping m;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 3)
      throw DataError("malformed av mapping row in " + csv_path + ": " + line);
    if (f[1] != "low" && f[1] != "high")
      throw DataError("arousal must be low|high: " + line);
    if (f[2] != "negative" && f[2] != "neutral" && f[2] != "positive")
      throw DataError("valence must be negative|neutral|positive: " + line);
    if (!m.table.emplace(f[0], std::make_pair(f[1], f[2])).second)
      throw DataError("duplicate av mapping label: " + f[0]);
  }
  if (m.table.empty()) throw DataError("empty av mapping: " + csv_path);
  return m;
}

void load_aliases(AvMapping& mapping, const std::string& csv_path) {
  std::ifstream in(csv_path);
  if (!in) throw DataError("cannot open alias file: " + csv_path);
  std::string line;
  if (!std::getline(in, line) ||
      split_csv_line(line) != std::vector<std::string>{"label", "canonical"})
    throw DataError("alias header must be label,canonical: " + csv_path);
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_csv_line(line);
    if (f.size() != 2)
      throw DataError("malformed alias row in " + csv_path + ": " + line);
    if (!mapping.table.count(f[1]))
      throw DataError("alias target '" + f[1] + "' is not a table label");
    mapping.aliases[f[0]] = f[1];
  }
}

std::pair<std::string, std::string> map_to_av(const std::string& label,
                                              const AvMapping& mapping) {
  std::string key = label;
  const auto alias = mapping.aliases.find(key);
  if (alias != mapping.aliases.end()) key = alias->second;
  const auto it = mapping.table.find(key);
  if (it == mapping.table.end())
    throw DataError("label '" + label +
                    "' has no arousal/valence mapping (add an alias)");
  return it->second;
}

std::vector<std::size_t> balanced_subsample(
    std::size_t n_samples, const std::vector<std::int64_t>& class_of,
    Rng& rng) {
  if (class_of.size() != n_samples)
    throw std::invalid_argument("balanced_subsample: class_of size mismatch");
  if (n_samples == 0) return {};
  std::map<std::int64_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n_samples; ++i) by_class[class_of[i]].push_back(i);
  std::size_t min_count = n_samples;
  for (const auto& [cls, members] : by_class)
    min_count = std::min(min_count, members.size());
  std::vector<std::size_t> keep;
  for (auto& [cls, members] : by_class) {
    rng.shuffle(members);
    keep.insert(keep.end(), members.begin(), members.begin() +
                                                 static_cast<std::ptrdiff_t>(
                                                     min_count));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

std::vector<Batch> make_batches(const std::vector<Tensor>& mels,
                                const std::vector<std::int64_t>& labels,
                                const std::string& domain_id, int batch_size,
                                Rng& rng) {
  if (mels.size() != labels.size())
    throw std::invalid_argument("make_batches: labels size mismatch");
  if (batch_size < 1)
    throw std::invalid_argument("make_batches: batch_size < 1");
  const std::size_t n = mels.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  // Cut points every batch_size samples; avoid a trailing singleton so
  // batch statistics stay defined.
  std::vector<std::size_t> sizes;
  std::size_t remaining = n;
  while (remaining > 0) {
    std::size_t take = std::min<std::size_t>(remaining,
                                             static_cast<std::size_t>(
                                                 batch_size));
    if (remaining - take == 1 && take > 1) --take;
    sizes.push_back(take);
    remaining -= take;
  }

  std::vector<Batch> batches;
  std::size_t cursor = 0;
  for (const std::size_t sz : sizes) {
    Batch b;
    b.domain_id = domain_id;
    std::int64_t w_max = 1;
    for (std::size_t k = 0; k < sz; ++k) {
      const Tensor& mel = mels[order[cursor + k]];
      if (mel.rank() != 2)
        throw std::invalid_argument("make_batches: features must be 2-d");
      w_max = std::max(w_max, mel.shape[1]);
    }
    const std::int64_t n_mels = mels[order[cursor]].shape[0];
    b.features = Tensor({static_cast<std::int64_t>(sz), 1, n_mels, w_max});
    for (std::size_t k = 0; k < sz; ++k) {
      const Tensor& mel = mels[order[cursor + k]];
      if (mel.shape[0] != n_mels)
        throw std::invalid_argument("make_batches: inconsistent mel rows");
      b.lengths.push_back(mel.shape[1]);
      b.labels.push_back(labels[order[cursor + k]]);
      for (std::int64_t r = 0; r < n_mels; ++r)
        std::copy(mel.data.begin() + r * mel.shape[1],
                  mel.data.begin() + (r + 1) * mel.shape[1],
                  b.features.data.begin() +
                      ((static_cast<std::int64_t>(k) * n_mels + r) * w_max));
    }
    batches.push_back(std::move(b));
    cursor += sz;
  }
  return batches;
}

const std::vector<std::string>& synthetic_label_names() {
  static const std::vector<std::string> kNames{
      "sadness", "anger", "happiness", "neutral",
      "fear",    "boredom", "joy",     "surprise"};
  return kNames;
}

CorpusManifest generate_synthetic_corpus(const SynthSpec& spec,
                                         const std::string& out_dir,
                                         std::uint64_t seed) {
  if (spec.n_classes < 1 ||
      spec.n_classes > static_cast<int>(synthetic_label_names().size()))
    throw ConfigError("synthetic corpus supports 1.." +
                      std::to_string(synthetic_label_names().size()) +
                      " classes");
  if (spec.samples_per_class < 1)
    throw ConfigError("samples_per_class must be >= 1");

  namespace fs = std::filesystem;
  const fs::path root = fs::path(out_dir) / spec.corpus_id;
  fs::create_directories(root);

  Rng root_rng(seed);
  CorpusManifest m;
  m.corpus_id = spec.corpus_id;
  constexpr int kSpeakers = 10;  // 6 train / 2 dev / 2 test
  constexpr int kSampleRate = 16000;
  constexpr double kTwoPi = 6.283185307179586;

  for (int cls = 0; cls < spec.n_classes; ++cls) {
    const std::string& label = synthetic_label_names()[static_cast<std::size_t>(
        cls)];
    const double tone_hz = 400.0 * (cls + 1);
    for (int i = 0; i < spec.samples_per_class; ++i) {
      Rng rng = root_rng.split("clip:" + std::to_string(cls) + ":" +
                               std::to_string(i));
      const double seconds = 1.0 + 2.0 * rng.uniform();
      const std::int64_t n =
          static_cast<std::int64_t>(std::llround(seconds * kSampleRate));
      const double phase = kTwoPi * rng.uniform();
      AudioClip clip;
      clip.sample_rate = kSampleRate;
      clip.samples.resize(static_cast<std::size_t>(n));
      double lp = 0.0;  // one-pole low-passed noise state
      for (std::int64_t t = 0; t < n; ++t) {
        const double white = 2.0 * rng.uniform() - 1.0;
        lp = 0.9 * lp + 0.1 * white;
        const double tone =
            std::sin(kTwoPi * tone_hz * t / kSampleRate + phase);
        clip.samples[static_cast<std::size_t>(t)] = static_cast<float>(
            spec.tone_amplitude * tone + spec.noise_amplitude * lp);
      }
      std::ostringstream name;
      name << "clip_c" << cls << "_" << i << ".wav";
      const fs::path wav_path = root / name.str();
      save_wav_pcm16(wav_path.string(), clip);

      const int speaker = i % kSpeakers;
      SampleEntry e;
      e.audio_path = wav_path.string();
      e.label = label;
      e.speaker = "spk" + std::to_string(speaker);
      e.partition = speaker < 6 ? "train" : (speaker < 8 ? "dev" : "test");
      m.samples.push_back(std::move(e));
    }
    m.label_space.push_back(label);
  }
  save_manifest(m, (root / "manifest.csv").string());
  return m;
}

}  // namespace resadapt
