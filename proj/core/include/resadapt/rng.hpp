#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

#include "resadapt/common.hpp"

namespace resadapt {

// Deterministic, implementation-independent random stream. All sampling is
// hand-rolled on top of splitmix64 so results are identical across standard
// libraries and platforms. Streams are derived from a root seed by name or
// index, so adding a new consumer never shifts existing streams and drawing
// from a stream never shifts its children.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), state_(seed) {}

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [lo, hi] inclusive, unbiased via rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

  // Standard normal via Box-Muller (no caching, two u64 per draw).
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates in-place shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(uniform_int(0, i))],
                v[static_cast<std::size_t>(i)]);
    }
  }

  // Child stream derived from this stream's construction seed and a stable
  // tag. Independent of how much has been drawn from this stream.
  Rng split(std::string_view tag) const {
    return Rng(mix(seed_, fnv1a64(tag.data(), tag.size())));
  }
  Rng split(std::uint64_t index) const { return Rng(mix(seed_, index)); }

  std::uint64_t seed() const { return seed_; }

 private:
  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace resadapt
