#include "cutmixsl/rng.hpp"

#include <cmath>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {

namespace {

constexpr std::uint64_t kSplitMixGamma = 0x9e3779b97f4a7c15ULL;

std::uint64_t splitmix_advance(std::uint64_t& state) {
  state += kSplitMixGamma;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t mix_word(std::uint64_t acc, std::uint64_t word) {
  std::uint64_t s = acc ^ (word + kSplitMixGamma);
  return splitmix_advance(s);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, StreamId id) {
  std::uint64_t s = seed;
  s = mix_word(s, 0x726f756e64ULL + id.round);
  s = mix_word(s, 0x726f6c65ULL + static_cast<std::uint64_t>(id.role));
  s = mix_word(s, 0x696e646578ULL + id.index);
  state_ = s;
}

std::uint64_t RngStream::next_u64() { return splitmix_advance(state_); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_below(std::uint64_t bound) {
  if (bound == 0) throw ParameterError("uniform_below: bound must be >= 1");
  const std::uint64_t threshold = (0 - bound) % bound;  // 2^64 mod bound
  for (;;) {
    const std::uint64_t r = next_u64();
    if (r >= threshold) return r % bound;
  }
}

double RngStream::normal(double variance) {
  if (variance < 0.0) throw ParameterError("normal: variance must be >= 0");
  if (variance == 0.0) return 0.0;
  const double sd = std::sqrt(variance);
  if (has_spare_) {
    has_spare_ = false;
    return sd * spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return sd * u * m;
}

double RngStream::gamma(double shape) {
  if (!(shape > 0.0)) throw ParameterError("gamma: shape must be > 0");
  if (shape < 1.0) {
    double u = uniform();
    while (u == 0.0) u = uniform();
    return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = normal(1.0);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<std::uint32_t> RngStream::permutation(std::uint32_t n) {
  std::vector<std::uint32_t> idx(n);
  for (std::uint32_t i = 0; i < n; ++i) idx[i] = i;
  for (std::uint32_t i = n; i > 1; --i) {
    const auto j = static_cast<std::uint32_t>(uniform_below(i));
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

}  // namespace cutmixsl
