#pragma once

#include <cstdint>
#include <vector>

namespace cutmixsl {

enum class Role : std::uint32_t { client = 0, mixer = 1, server = 2 };

// Identifies one independent draw stream inside a seeded experiment.
// Streams are keyed by (round, role, index) so adding clients or rounds
// never perturbs the draws of existing streams.
struct StreamId {
  std::uint32_t round = 0;
  Role role = Role::client;
  std::uint32_t index = 0;
};

// Deterministic pseudo-random stream based on splitmix64. Identical
// (seed, StreamId) pairs replay bit-identical draw sequences; all sampling
// algorithms are spelled out here rather than delegated to <random> so the
// sequences do not depend on the standard library implementation.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamId id);

  std::uint64_t next_u64();
  // Uniform in [0, 1), 53-bit resolution.
  double uniform();
  // Uniform integer in [0, bound), rejection-sampled (unbiased). bound >= 1.
  std::uint64_t uniform_below(std::uint64_t bound);
  // Zero-mean Gaussian draw with the given variance (polar method).
  double normal(double variance);
  // Gamma(shape, 1) draw, shape > 0 (Marsaglia-Tsang, with the boost
  // transform for shape < 1).
  double gamma(double shape);
  // Fisher-Yates permutation of {0, ..., n-1}.
  std::vector<std::uint32_t> permutation(std::uint32_t n);

 private:
  std::uint64_t state_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cutmixsl
