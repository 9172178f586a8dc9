#include "resadapt/runconfig.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <type_traits>

#include "resadapt/common.hpp"

namespace resadapt {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

// Empty elements ("a,,b") are kept so callers reject them loudly instead
// of silently absorbing a typo.
std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) parts.push_back(trim(part));
  return parts;
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t consumed = 0;
    const long long v = std::stoll(value, &consumed);
    if (consumed != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not an integer: " + value);
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t consumed = 0;
    const double v = std::stod(value, &consumed);
    if (consumed != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": not a number: " + value);
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key " + key + ": not a boolean: " + value);
}

std::string format_double(double v) {
  char buf[32];
  const auto result = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, result.ptr);  // shortest round-trip form
}

template <typename T>
std::string join_commas(const std::vector<T>& values) {
  std::ostringstream out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out << ',';
    if constexpr (std::is_same_v<T, double>)
      out << format_double(values[i]);
    else
      out << values[i];
  }
  return out.str();
}

}  // namespace

RunConfig default_run_config() {
  RunConfig config;
  const char* cache_env = std::getenv("RESADAPT_CACHE");
  config.cache_dir = (cache_env && *cache_env) ? cache_env : "cache";
  return config;
}

void apply_key_value(RunConfig& config, const std::string& key,
                     const std::string& value) {
  // train.*
  if (key == "train.batch_size") {
    config.train.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "train.momentum") {
    config.train.momentum = parse_double(key, value);
  } else if (key == "train.lr_stages") {
    std::vector<double> stages;
    for (const auto& part : split_commas(value))
      stages.push_back(parse_double(key, part));
    if (stages.empty())
      throw ConfigError("config key train.lr_stages: empty list");
    config.train.lr_stages = std::move(stages);
  } else if (key == "train.per_update_decay") {
    config.train.per_update_decay = parse_double(key, value);
  } else if (key == "train.patience_epochs") {
    config.train.patience_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "train.round_robin_steps_per_stage") {
    config.train.round_robin_steps_per_stage =
        static_cast<int>(parse_int(key, value));
  } else if (key == "train.head_only_initial_lr") {
    config.train.head_only_initial_lr = parse_double(key, value);
  } else if (key == "train.max_epochs") {
    config.train.max_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "train.target_dev_uar") {
    config.train.target_dev_uar = parse_double(key, value);
  } else if (key == "train.dev_eval_every_rounds") {
    config.train.dev_eval_every_rounds =
        static_cast<int>(parse_int(key, value));
    // arch.*
  } else if (key == "arch.stack_filters") {
    std::vector<int> filters;
    for (const auto& part : split_commas(value))
      filters.push_back(static_cast<int>(parse_int(key, part)));
    if (filters.empty())
      throw ConfigError("config key arch.stack_filters: empty list");
    config.arch.stack_filters = std::move(filters);
  } else if (key == "arch.blocks_per_stack") {
    config.arch.blocks_per_stack = static_cast<int>(parse_int(key, value));
  } else if (key == "arch.initial_filters") {
    config.arch.initial_filters = static_cast<int>(parse_int(key, value));
  } else if (key == "arch.attention_shared") {
    config.arch.attention_shared = parse_bool(key, value);
  } else if (key == "arch.head_hidden_width") {
    config.arch.head_hidden_width = static_cast<int>(parse_int(key, value));
  } else if (key == "arch.head_dropout_rate") {
    config.arch.head_dropout_rate = parse_double(key, value);
    // paths.*
  } else if (key == "paths.manifests") {
    config.manifests = split_commas(value);
    for (const auto& path : config.manifests)
      if (path.empty())
        throw ConfigError("config key paths.manifests: empty path element");
  } else if (key == "paths.cache_dir") {
    config.cache_dir = value;
  } else if (key == "paths.checkpoint_dir") {
    config.checkpoint_dir = value;
  } else if (key == "paths.scores") {
    config.scores_path = value;
  } else if (key == "paths.records_dir") {
    config.records_dir = value;
  } else if (key == "paths.av_mapping") {
    config.av_mapping_path = value;
  } else if (key == "paths.av_aliases") {
    config.av_aliases_path = value;
    // run.*
  } else if (key == "run.regime") {
    parse_regime(value);  // validates
    config.regime = value;
  } else if (key == "run.model_id") {
    config.model_id = value;
  } else if (key == "run.seeds") {
    parse_seed_list(value);  // validates
    config.seeds = value;
  } else if (key == "run.from_checkpoint") {
    config.from_checkpoint = value;
  } else if (key == "run.target") {
    if (value != "arousal" && value != "valence" && value != "both")
      throw ConfigError(
          "config key run.target: expected arousal, valence, or both, got " +
          value);
    config.target = value;
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  RunConfig config = base;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(line_no) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(path + ":" + std::to_string(line_no) + ": empty key");
    apply_key_value(config, key, value);
  }
  return config;
}

std::string dump_run_config(const RunConfig& config) {
  std::ostringstream out;
  out << "train.batch_size = " << config.train.batch_size << "\n";
  out << "train.momentum = " << format_double(config.train.momentum) << "\n";
  out << "train.lr_stages = " << join_commas(config.train.lr_stages) << "\n";
  out << "train.per_update_decay = "
      << format_double(config.train.per_update_decay) << "\n";
  out << "train.patience_epochs = " << config.train.patience_epochs << "\n";
  out << "train.round_robin_steps_per_stage = "
      << config.train.round_robin_steps_per_stage << "\n";
  out << "train.head_only_initial_lr = "
      << format_double(config.train.head_only_initial_lr) << "\n";
  out << "train.max_epochs = " << config.train.max_epochs << "\n";
  out << "train.target_dev_uar = " << format_double(config.train.target_dev_uar)
      << "\n";
  out << "train.dev_eval_every_rounds = " << config.train.dev_eval_every_rounds
      << "\n";
  out << "arch.stack_filters = " << join_commas(config.arch.stack_filters)
      << "\n";
  out << "arch.blocks_per_stack = " << config.arch.blocks_per_stack << "\n";
  out << "arch.initial_filters = " << config.arch.initial_filters << "\n";
  out << "arch.attention_shared = "
      << (config.arch.attention_shared ? "true" : "false") << "\n";
  out << "arch.head_hidden_width = " << config.arch.head_hidden_width << "\n";
  out << "arch.head_dropout_rate = "
      << format_double(config.arch.head_dropout_rate) << "\n";
  out << "paths.manifests = " << join_commas(config.manifests) << "\n";
  out << "paths.cache_dir = " << config.cache_dir << "\n";
  out << "paths.checkpoint_dir = " << config.checkpoint_dir << "\n";
  out << "paths.scores = " << config.scores_path << "\n";
  out << "paths.records_dir = " << config.records_dir << "\n";
  out << "paths.av_mapping = " << config.av_mapping_path << "\n";
  out << "paths.av_aliases = " << config.av_aliases_path << "\n";
  out << "run.regime = " << config.regime << "\n";
  out << "run.model_id = " << config.model_id << "\n";
  out << "run.seeds = " << config.seeds << "\n";
  out << "run.from_checkpoint = " << config.from_checkpoint << "\n";
  out << "run.target = " << config.target << "\n";
  return out.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  const std::string trimmed = trim(text);
  if (trimmed.empty()) throw ConfigError("seed list is empty");
  const auto range = trimmed.find("..");
  std::vector<std::uint64_t> seeds;
  if (range != std::string::npos) {
    const std::int64_t lo =
        parse_int("seeds", trim(trimmed.substr(0, range)));
    const std::int64_t hi =
        parse_int("seeds", trim(trimmed.substr(range + 2)));
    if (lo < 0 || hi < lo)
      throw ConfigError("seed range must satisfy 0 <= lo <= hi: " + trimmed);
    for (std::int64_t s = lo; s <= hi; ++s)
      seeds.push_back(static_cast<std::uint64_t>(s));
    return seeds;
  }
  for (const auto& part : split_commas(trimmed)) {
    const std::int64_t s = parse_int("seeds", part);
    if (s < 0) throw ConfigError("seeds must be non-negative: " + trimmed);
    seeds.push_back(static_cast<std::uint64_t>(s));
  }
  if (seeds.empty()) throw ConfigError("seed list is empty");
  return seeds;
}

}  // namespace resadapt
