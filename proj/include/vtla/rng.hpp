#pragma once

#include <cstdint>
#include <utility>
#include <string_view>

namespace vtla {

/// SplitMix64 finalizer. Bijective 64-bit mixer.
std::uint64_t mix64(std::uint64_t x);

/// Order-sensitive combination of two 64-bit keys.
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);

/// FNV-1a over the bytes of `name`.
std::uint64_t hash_name(std::string_view name);

/// Counter-based random stream.
///
/// Draw `i` of a stream is a pure function of (key, i), so named streams
/// derived from one seed never perturb each other no matter how many values
/// each consumes. Distributions are implemented here rather than taken from
/// <random> so that sequences are identical across standard libraries.
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::string_view name);
  explicit RandomStream(std::uint64_t key) : key_(key) {}

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform on [lo, hi].
  double uniform(double lo, double hi);
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one value per two uniforms).
  double normal();
  /// Both Box-Muller outputs from one pair of uniforms.
  std::pair<double, double> normal_pair();

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Per-unit seed derivation used for episodes, trials and samples.
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::uint64_t index) {
  return hash_combine(run_seed, index);
}

}  // namespace vtla
