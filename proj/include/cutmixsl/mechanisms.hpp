#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cutmixsl/core.hpp"

namespace cutmixsl {

enum class Mechanism { dp_sl, dp_mixsl, dp_cutmixsl };

std::string mechanism_name(Mechanism m);
Mechanism mechanism_from_name(const std::string& name);

// Which form the Gaussian injection takes for the patch-mixed mechanism.
//   masked_noise:   s_bar_i = M_i ⊙ (s_i + n_i),  y_bar_i = λ_i (y_i + n_i)
//   unmasked_noise: s_bar_i = M_i ⊙ s_i + n_i,    y_bar_i = λ_i y_i + n_i
// The first is the protocol equation; the second is the summary-table form
// whose per-release noise does not shrink with the mixing weight.
enum class NoiseMode { masked_noise, unmasked_noise };

struct MechanismConfig {
  double sigma_s_sq = 0.0;  // smashed-noise variance
  double sigma_y_sq = 0.0;  // label-noise variance
  NoiseMode noise_mode = NoiseMode::masked_noise;
  bool clamp_labels = false;
};

void validate_config(const MechanismConfig& cfg);

// One contributor to a released batch: patch mask for CutMix-style mixing,
// no mask (ratio only) for Mixup-style mixing.
struct Contribution {
  std::uint32_t client = 0;
  double ratio = 1.0;
  std::optional<PatchMask> mask;
};

// Mixer output: all N patches populated, soft label, contributor records.
struct MixedBatch {
  SmashedData smashed;
  std::vector<double> label;
  std::vector<Contribution> provenance;
};

// Clamp every entry to [0, 1] in place.
void clamp01(std::vector<double>& values);

// What one client hands to the mixer. The aggregate ops below and the
// protocol build their releases from the same three helpers, so the
// in-process mechanism and the message-level protocol agree bit for bit.
struct ClientRelease {
  Matrix smashed;
  std::vector<double> label;
};

// DP-SL upload: (s + n_s, y + n_y).
ClientRelease release_plain(const SmashedData& s, const OneHotLabel& y,
                            const MechanismConfig& cfg, RngStream& rng);

// Mixup-style contribution: (lambda s + n_s, lambda y + n_y).
ClientRelease release_mix_contribution(const SmashedData& s, const OneHotLabel& y, double lambda,
                                       const MechanismConfig& cfg, RngStream& rng);

// CutMix-style contribution, by noise mode:
//   masked_noise:   (M ⊙ (s + n_s), lambda (y + n_y))
//   unmasked_noise: (M ⊙ s + n_s,   lambda y + n_y)
ClientRelease release_cutmix_contribution(const SmashedData& s, const OneHotLabel& y,
                                          const PatchMask& mask, double lambda,
                                          const MechanismConfig& cfg, RngStream& rng);

// Gaussian mechanism on a single client's pair, no mixing.
MixedBatch dp_sl(const SmashedData& s, const OneHotLabel& y, const MechanismConfig& cfg,
                 RngStream& rng);

// Mixup-style convex combination: Σ(λ_i s_i + n_i), Σ(λ_i y_i + n_i).
MixedBatch dp_mix(const std::vector<SmashedData>& s_list, const std::vector<OneHotLabel>& y_list,
                  const MixRatios& ratios, const MechanismConfig& cfg, RngStream& rng);

// Patch-wise CutMix over a mask partition; label weights are the realized
// patch fractions.
MixedBatch dp_cutmix(const std::vector<SmashedData>& s_list,
                     const std::vector<OneHotLabel>& y_list,
                     const std::vector<PatchMask>& masks, const MechanismConfig& cfg,
                     RngStream& rng);

// Box-shaped two-client masks: mask 2 is a contiguous rectangle of area
// nearest ceil(lambda_2 * N) placed uniformly at random, mask 1 its
// complement.
std::vector<PatchMask> vanilla_cutmix_masks(const MixRatios& ratios, std::size_t grid_rows,
                                            std::size_t grid_cols, RngStream& rng);

// Single-client case of patch-wise CutMix: keep ceil(ratio * N) random
// patches, zero the rest, scale the label by the realized fraction.
MixedBatch random_cutout(const SmashedData& s, const OneHotLabel& y, double ratio,
                         const MechanismConfig& cfg, RngStream& rng);

}  // namespace cutmixsl
