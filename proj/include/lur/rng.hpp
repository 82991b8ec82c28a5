#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace lur {

/// Deterministic random stream: xoshiro256++ seeded through SplitMix64.
/// The generator family is fixed (rather than std:: distributions) so that a
/// given seed reproduces the same stream bit-exactly on every platform this
/// library builds on. Distinct seeds are treated as independent streams.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform double in [0, 1), 53-bit resolution.
  double uniform();

  /// Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  /// Fisher-Yates shuffle driven by this stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Seed for an independent substream (per-member inits, per-row eval draws).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::array<std::uint64_t, 4> state_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace lur
