#include "cutmixsl/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {

SmashedData make_smashed(Matrix values, double delta) {
  if (values.rows < 1 || values.cols < 1)
    throw ParameterError("make_smashed: need N >= 1 patches and F >= 1 features");
  if (!(delta > 0.0)) throw ParameterError("make_smashed: delta must be > 0");
  for (const double v : values.data) {
    if (!(v >= 0.0 && v <= delta))
      throw InvariantError("make_smashed: entry outside [0, delta]");
  }
  return SmashedData{std::move(values), delta};
}

OneHotLabel one_hot(std::size_t n_classes, std::size_t hot) {
  if (n_classes < 1 || hot >= n_classes)
    throw ParameterError("one_hot: hot index out of range");
  OneHotLabel y;
  y.values.assign(n_classes, 0.0);
  y.values[hot] = 1.0;
  return y;
}

std::size_t PatchMask::count() const {
  std::size_t n = 0;
  for (const auto b : selected) n += (b != 0);
  return n;
}

PatchMask full_mask(std::size_t n_patches) {
  return PatchMask{std::vector<std::uint8_t>(n_patches, 1)};
}

double MixRatios::max() const {
  return *std::max_element(lambdas.begin(), lambdas.end());
}

void validate_ratios(const MixRatios& ratios) {
  if (ratios.lambdas.empty()) throw ParameterError("ratios: empty");
  double sum = 0.0;
  for (const double l : ratios.lambdas) {
    if (!(l >= 0.0)) throw InvariantError("ratios: negative weight");
    sum += l;
  }
  if (std::abs(sum - 1.0) > 1e-12) throw InvariantError("ratios: weights do not sum to 1");
}

MixRatios sample_mix_ratios(std::size_t k, double alpha_m, RngStream& rng) {
  if (k < 1) throw ParameterError("sample_mix_ratios: k must be >= 1");
  if (!(alpha_m > 0.0)) throw ParameterError("sample_mix_ratios: alpha_m must be > 0");
  MixRatios out;
  out.source = RatioSource::dirichlet_draw;
  if (k == 1) {
    out.lambdas = {1.0};
    return out;
  }
  out.lambdas.resize(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    out.lambdas[i] = rng.gamma(alpha_m);
    sum += out.lambdas[i];
  }
  // A sum of k Gamma(alpha_m) draws is zero only with probability zero, but
  // guard against underflow for very small alpha_m.
  if (sum <= 0.0) {
    std::fill(out.lambdas.begin(), out.lambdas.end(), 1.0 / static_cast<double>(k));
    return out;
  }
  for (double& l : out.lambdas) l /= sum;
  return out;
}

std::vector<PatchMask> allocate_masks(const MixRatios& ratios, std::size_t n_patches,
                                      RngStream& rng) {
  validate_ratios(ratios);
  const std::size_t k = ratios.size();
  if (n_patches < 1) throw ParameterError("allocate_masks: n_patches must be >= 1");
  const bool all_positive =
      std::all_of(ratios.lambdas.begin(), ratios.lambdas.end(), [](double l) { return l > 0.0; });
  if (n_patches < k && all_positive)
    throw ParameterError("allocate_masks: fewer patches than clients with positive shares");

  // Largest-remainder apportionment of lambda_i * N.
  const double n = static_cast<double>(n_patches);
  std::vector<std::size_t> sizes(k);
  std::vector<double> remainders(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double share = ratios.lambdas[i] * n;
    sizes[i] = static_cast<std::size_t>(std::floor(share));
    remainders[i] = share - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  // Stable sort keeps ascending client index among equal remainders.
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  for (std::size_t j = 0; assigned < n_patches; ++j, ++assigned) sizes[order[j]] += 1;

  const std::vector<std::uint32_t> perm = rng.permutation(static_cast<std::uint32_t>(n_patches));
  std::vector<PatchMask> masks(k);
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < k; ++i) {
    masks[i].selected.assign(n_patches, 0);
    for (std::size_t j = 0; j < sizes[i]; ++j) masks[i].selected[perm[cursor++]] = 1;
  }
  return masks;
}

void require_partition(const std::vector<PatchMask>& masks) {
  if (masks.empty()) throw InvariantError("partition: no masks");
  const std::size_t n = masks.front().length();
  for (const auto& m : masks) {
    if (m.length() != n) throw InvariantError("partition: mask length mismatch");
  }
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t owners = 0;
    for (const auto& m : masks) owners += m.covers(p);
    if (owners != 1) throw InvariantError("partition: patch not covered exactly once");
  }
}

MixRatios realized_ratios(const std::vector<PatchMask>& masks) {
  require_partition(masks);
  const double n = static_cast<double>(masks.front().length());
  MixRatios out;
  out.source = RatioSource::realized;
  out.lambdas.resize(masks.size());
  double partial = 0.0;
  for (std::size_t i = 0; i + 1 < masks.size(); ++i) {
    out.lambdas[i] = static_cast<double>(masks[i].count()) / n;
    partial += out.lambdas[i];
  }
  out.lambdas.back() = 1.0 - partial;  // exact unit sum
  return out;
}

Matrix add_gaussian_noise(const Matrix& tensor, double variance, RngStream& rng) {
  if (variance < 0.0) throw ParameterError("add_gaussian_noise: variance must be >= 0");
  if (variance == 0.0) return tensor;
  Matrix out = tensor;
  for (double& v : out.data) v += rng.normal(variance);
  return out;
}

}  // namespace cutmixsl
