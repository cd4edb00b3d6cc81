#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace umm {

std::uint64_t splitmix64(std::uint64_t x);
// FNV-1a; stable across platforms, used for stream tags and config digests.
std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 14695981039346656037ull);

/// Seeded random stream. Independent streams are derived from
/// (seed, purpose tag, index) so that adding a consumer never shifts another.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(splitmix64(seed)) {}
  static Rng stream(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0);

  double uniform() { return uniform_(engine_); }
  double normal() { return normal_(engine_); }
  bool bernoulli(double p) { return uniform() < p; }
  // Inclusive bounds.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace umm
