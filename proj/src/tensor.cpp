#include "cutmixsl/tensor.hpp"

#include <cmath>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> a) {
  double acc = 0.0;
  for (const double v : a) acc += v * v;
  return std::sqrt(acc);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("squared_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

bool all_finite(std::span<const double> a) {
  for (const double v : a) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace cutmixsl
