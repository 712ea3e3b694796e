#pragma once

#include <cstdint>
#include <vector>

#include "cutmixsl/rng.hpp"
#include "cutmixsl/tensor.hpp"

namespace cutmixsl {

// Cut-layer activation tensor of one client: N patches x F features.
// Client-produced tensors satisfy 0 <= value <= delta entrywise (enforced by
// make_smashed and by the embedding squash); released tensors built after
// noise injection may exceed that range and are constructed directly.
struct SmashedData {
  Matrix values;       // [n_patches x feat_dim]
  double delta = 1.0;  // pixel-wise upper bound

  std::size_t n_patches() const { return values.rows; }
  std::size_t feat_dim() const { return values.cols; }
};

// Validating constructor: dims >= 1, delta > 0, all entries in [0, delta].
SmashedData make_smashed(Matrix values, double delta);

struct OneHotLabel {
  std::vector<double> values;
  std::size_t classes() const { return values.size(); }
};

// Exactly one entry 1, the rest 0.
OneHotLabel one_hot(std::size_t n_classes, std::size_t hot);

// Boolean selection over the patch index set.
struct PatchMask {
  std::vector<std::uint8_t> selected;

  std::size_t length() const { return selected.size(); }
  std::size_t count() const;
  bool covers(std::size_t patch) const { return selected[patch] != 0; }
};

PatchMask full_mask(std::size_t n_patches);

enum class RatioSource { dirichlet_draw, realized };

// Nonnegative mixing weights summing to 1.
struct MixRatios {
  std::vector<double> lambdas;
  RatioSource source = RatioSource::dirichlet_draw;

  std::size_t size() const { return lambdas.size(); }
  double max() const;
};

void validate_ratios(const MixRatios& ratios);

// k weights from the symmetric Dirichlet with concentration alpha_m.
MixRatios sample_mix_ratios(std::size_t k, double alpha_m, RngStream& rng);

// Largest-remainder apportionment of lambda_i * N patches per client, patch
// identities assigned through one uniform permutation. The k masks always
// partition {0..N-1} exactly; remainder ties go to the lowest client index.
std::vector<PatchMask> allocate_masks(const MixRatios& ratios, std::size_t n_patches,
                                      RngStream& rng);

// lambda_i = N_i / N from a partition of masks; the last weight is computed
// as 1 minus the rest so the sum is exactly 1.
MixRatios realized_ratios(const std::vector<PatchMask>& masks);

// Throws InvariantError unless the masks are pairwise disjoint and cover
// every patch index.
void require_partition(const std::vector<PatchMask>& masks);

// tensor + i.i.d. N(0, variance) per entry; variance 0 returns the input
// unchanged (bitwise).
Matrix add_gaussian_noise(const Matrix& tensor, double variance, RngStream& rng);

}  // namespace cutmixsl
