#pragma once

#include <array>
#include <cstdint>

namespace dstu {

/// xoshiro256** seeded through splitmix64. Every random draw in the library
/// goes through this generator so results depend only on the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  /// Normal(0, std) resampled until it falls within +-2 std.
  double truncated_normal(double std);

  /// Independent stream derived from this generator's seed and a tag.
  static Rng derive(std::uint64_t seed, std::uint64_t tag);

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dstu
