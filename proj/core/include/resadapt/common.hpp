#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace resadapt {

// Bad run configuration or CLI usage. Maps to exit code 1.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable or inconsistent input data (audio, manifests, caches,
// checkpoints). Maps to exit code 2.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite value detected in a numeric pipeline. Maps to exit code 3.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Mode { Train, Eval };

// FNV-1a over raw bytes. Used for parameter block checksums and for
// deriving named rng streams.
std::uint64_t fnv1a64(const void* data, std::size_t n_bytes,
                      std::uint64_t seed = 14695981039346656037ull);

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

}  // namespace resadapt
