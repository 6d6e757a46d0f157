#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace eot {

/// Deterministic random stream. Every randomized component draws from a
/// stream forked off a single root seed by purpose tag, so adding a consumer
/// never reorders another consumer's draws. Distributions are implemented by
/// hand (the standard library ones are implementation-defined).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  /// Child stream derived from this stream's base seed and a tag. Stable: it
  /// does not depend on how many values were drawn from the parent.
  RngStream fork(std::string_view tag) const;
  RngStream fork(std::uint64_t salt) const;

  std::uint64_t base_seed() const { return base_seed_; }

  std::uint64_t next_u64();
  /// Uniform in [0,1).
  double uniform();
  /// Uniform in [lo,hi); returns lo when lo == hi.
  double uniform(double lo, double hi);
  /// Uniform integer in [lo,hi] inclusive.
  int uniform_int(int lo, int hi);
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::uint64_t base_seed_ = 0;
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Seed mixing used by RngStream::fork; exposed so file formats and CLI
/// provenance can document the derivation.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);
std::uint64_t hash_tag(std::string_view tag);

}  // namespace eot
