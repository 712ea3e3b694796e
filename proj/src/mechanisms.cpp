#include "cutmixsl/mechanisms.hpp"

#include <algorithm>
#include <cmath>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {

std::string mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::dp_sl: return "dp_sl";
    case Mechanism::dp_mixsl: return "dp_mixsl";
    case Mechanism::dp_cutmixsl: return "dp_cutmixsl";
  }
  throw ParameterError("mechanism_name: unknown mechanism");
}

Mechanism mechanism_from_name(const std::string& name) {
  if (name == "dp_sl") return Mechanism::dp_sl;
  if (name == "dp_mixsl") return Mechanism::dp_mixsl;
  if (name == "dp_cutmixsl") return Mechanism::dp_cutmixsl;
  throw ParameterError("unknown mechanism: " + name);
}

void validate_config(const MechanismConfig& cfg) {
  if (cfg.sigma_s_sq < 0.0 || cfg.sigma_y_sq < 0.0)
    throw ParameterError("mechanism config: variances must be >= 0");
}

void clamp01(std::vector<double>& values) {
  for (double& v : values) v = std::min(1.0, std::max(0.0, v));
}

namespace {

void require_common_shapes(const std::vector<SmashedData>& s_list,
                           const std::vector<OneHotLabel>& y_list, std::size_t expected) {
  if (s_list.empty() || s_list.size() != y_list.size() || s_list.size() != expected)
    throw DimensionError("mechanism: input list sizes disagree");
  const auto& first = s_list.front();
  for (const auto& s : s_list) {
    if (!s.values.same_shape(first.values) || s.delta != first.delta)
      throw DimensionError("mechanism: smashed shapes/delta disagree");
  }
  for (const auto& y : y_list) {
    if (y.classes() != y_list.front().classes())
      throw DimensionError("mechanism: label lengths disagree");
  }
}

// Pure noise tensor; zero draws when variance == 0 so noiseless runs replay
// the same stream positions as the identity path.
Matrix gaussian_tensor(std::size_t rows, std::size_t cols, double variance, RngStream& rng) {
  Matrix n(rows, cols, 0.0);
  if (variance > 0.0) {
    for (double& v : n.data) v = rng.normal(variance);
  }
  return n;
}

std::vector<double> label_noise(std::size_t classes, double variance, RngStream& rng) {
  std::vector<double> n(classes, 0.0);
  if (variance > 0.0) {
    for (double& v : n) v = rng.normal(variance);
  }
  return n;
}

}  // namespace

ClientRelease release_plain(const SmashedData& s, const OneHotLabel& y,
                            const MechanismConfig& cfg, RngStream& rng) {
  validate_config(cfg);
  const Matrix noise = gaussian_tensor(s.values.rows, s.values.cols, cfg.sigma_s_sq, rng);
  ClientRelease out;
  out.smashed = s.values;
  for (std::size_t e = 0; e < noise.size(); ++e) out.smashed.data[e] += noise.data[e];
  out.label = y.values;
  const std::vector<double> ny = label_noise(y.classes(), cfg.sigma_y_sq, rng);
  for (std::size_t c = 0; c < y.classes(); ++c) out.label[c] += ny[c];
  return out;
}

ClientRelease release_mix_contribution(const SmashedData& s, const OneHotLabel& y, double lambda,
                                       const MechanismConfig& cfg, RngStream& rng) {
  validate_config(cfg);
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ParameterError("release_mix_contribution: lambda outside [0, 1]");
  const Matrix noise = gaussian_tensor(s.values.rows, s.values.cols, cfg.sigma_s_sq, rng);
  ClientRelease out;
  out.smashed = Matrix(s.values.rows, s.values.cols, 0.0);
  for (std::size_t e = 0; e < noise.size(); ++e)
    out.smashed.data[e] = lambda * s.values.data[e] + noise.data[e];
  const std::vector<double> ny = label_noise(y.classes(), cfg.sigma_y_sq, rng);
  out.label.assign(y.classes(), 0.0);
  for (std::size_t c = 0; c < y.classes(); ++c) out.label[c] = lambda * y.values[c] + ny[c];
  return out;
}

ClientRelease release_cutmix_contribution(const SmashedData& s, const OneHotLabel& y,
                                          const PatchMask& mask, double lambda,
                                          const MechanismConfig& cfg, RngStream& rng) {
  validate_config(cfg);
  if (mask.length() != s.n_patches())
    throw DimensionError("release_cutmix_contribution: mask length mismatch");
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ParameterError("release_cutmix_contribution: lambda outside [0, 1]");
  const Matrix noise = gaussian_tensor(s.values.rows, s.values.cols, cfg.sigma_s_sq, rng);
  ClientRelease out;
  out.smashed = Matrix(s.values.rows, s.values.cols, 0.0);
  for (std::size_t p = 0; p < s.values.rows; ++p) {
    if (cfg.noise_mode == NoiseMode::masked_noise) {
      // Patches outside the mask carry no trace of this client, noise included.
      if (mask.covers(p)) {
        for (std::size_t c = 0; c < s.values.cols; ++c)
          out.smashed(p, c) = s.values(p, c) + noise(p, c);
      }
    } else {
      for (std::size_t c = 0; c < s.values.cols; ++c)
        out.smashed(p, c) = (mask.covers(p) ? s.values(p, c) : 0.0) + noise(p, c);
    }
  }
  const std::vector<double> ny = label_noise(y.classes(), cfg.sigma_y_sq, rng);
  out.label.assign(y.classes(), 0.0);
  for (std::size_t c = 0; c < y.classes(); ++c) {
    if (cfg.noise_mode == NoiseMode::masked_noise) {
      out.label[c] = lambda * (y.values[c] + ny[c]);
    } else {
      out.label[c] = lambda * y.values[c] + ny[c];
    }
  }
  return out;
}

MixedBatch dp_sl(const SmashedData& s, const OneHotLabel& y, const MechanismConfig& cfg,
                 RngStream& rng) {
  ClientRelease rel = release_plain(s, y, cfg, rng);
  MixedBatch out;
  out.smashed = SmashedData{std::move(rel.smashed), s.delta};
  out.label = std::move(rel.label);
  if (cfg.clamp_labels) clamp01(out.label);
  out.provenance = {Contribution{0, 1.0, std::nullopt}};
  return out;
}

MixedBatch dp_mix(const std::vector<SmashedData>& s_list, const std::vector<OneHotLabel>& y_list,
                  const MixRatios& ratios, const MechanismConfig& cfg, RngStream& rng) {
  validate_config(cfg);
  validate_ratios(ratios);
  require_common_shapes(s_list, y_list, ratios.size());
  const std::size_t k = ratios.size();
  const auto& shape = s_list.front().values;

  Matrix acc(shape.rows, shape.cols, 0.0);
  std::vector<double> label(y_list.front().classes(), 0.0);
  MixedBatch out;
  for (std::size_t i = 0; i < k; ++i) {
    const double lambda = ratios.lambdas[i];
    const ClientRelease rel = release_mix_contribution(s_list[i], y_list[i], lambda, cfg, rng);
    for (std::size_t e = 0; e < acc.size(); ++e) acc.data[e] += rel.smashed.data[e];
    for (std::size_t c = 0; c < label.size(); ++c) label[c] += rel.label[c];
    out.provenance.push_back(Contribution{static_cast<std::uint32_t>(i), lambda, std::nullopt});
  }
  if (cfg.clamp_labels) clamp01(label);
  out.smashed = SmashedData{std::move(acc), s_list.front().delta};
  out.label = std::move(label);
  return out;
}

MixedBatch dp_cutmix(const std::vector<SmashedData>& s_list,
                     const std::vector<OneHotLabel>& y_list,
                     const std::vector<PatchMask>& masks, const MechanismConfig& cfg,
                     RngStream& rng) {
  validate_config(cfg);
  require_partition(masks);
  require_common_shapes(s_list, y_list, masks.size());
  const auto& shape = s_list.front().values;
  if (masks.front().length() != shape.rows)
    throw DimensionError("dp_cutmix: mask length does not match patch count");
  const MixRatios lambdas = realized_ratios(masks);

  Matrix mixed(shape.rows, shape.cols, 0.0);
  std::vector<double> label(y_list.front().classes(), 0.0);
  MixedBatch out;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const double lambda = lambdas.lambdas[i];
    const ClientRelease rel =
        release_cutmix_contribution(s_list[i], y_list[i], masks[i], lambda, cfg, rng);
    for (std::size_t e = 0; e < mixed.size(); ++e) mixed.data[e] += rel.smashed.data[e];
    for (std::size_t c = 0; c < label.size(); ++c) label[c] += rel.label[c];
    out.provenance.push_back(Contribution{static_cast<std::uint32_t>(i), lambda, masks[i]});
  }
  if (cfg.clamp_labels) clamp01(label);
  out.smashed = SmashedData{std::move(mixed), s_list.front().delta};
  out.label = std::move(label);
  return out;
}

std::vector<PatchMask> vanilla_cutmix_masks(const MixRatios& ratios, std::size_t grid_rows,
                                            std::size_t grid_cols, RngStream& rng) {
  validate_ratios(ratios);
  if (ratios.size() != 2)
    throw UnsupportedError("vanilla_cutmix_masks: only k = 2 is supported");
  if (grid_rows < 1 || grid_cols < 1)
    throw ParameterError("vanilla_cutmix_masks: empty grid");
  const std::size_t n = grid_rows * grid_cols;
  const auto target =
      std::min<std::size_t>(n, static_cast<std::size_t>(
                                   std::ceil(ratios.lambdas[1] * static_cast<double>(n))));

  // Area-nearest side pair; ties prefer the squarer box, then the wider one.
  std::size_t best_h = 0, best_w = 0;
  if (target > 0) {
    long best_diff = -1;
    for (std::size_t h = 1; h <= grid_rows; ++h) {
      for (std::size_t w = 1; w <= grid_cols; ++w) {
        const long diff = std::labs(static_cast<long>(h * w) - static_cast<long>(target));
        const long aspect = std::labs(static_cast<long>(h) - static_cast<long>(w));
        const long best_aspect = std::labs(static_cast<long>(best_h) - static_cast<long>(best_w));
        const bool better =
            best_diff < 0 || diff < best_diff ||
            (diff == best_diff &&
             (aspect < best_aspect || (aspect == best_aspect && w > best_w)));
        if (better) {
          best_diff = diff;
          best_h = h;
          best_w = w;
        }
      }
    }
  }

  PatchMask rect{std::vector<std::uint8_t>(n, 0)};
  if (best_h > 0 && best_w > 0) {
    const auto top = static_cast<std::size_t>(rng.uniform_below(grid_rows - best_h + 1));
    const auto left = static_cast<std::size_t>(rng.uniform_below(grid_cols - best_w + 1));
    for (std::size_t r = top; r < top + best_h; ++r) {
      for (std::size_t c = left; c < left + best_w; ++c) rect.selected[r * grid_cols + c] = 1;
    }
  }
  PatchMask complement{std::vector<std::uint8_t>(n, 0)};
  for (std::size_t p = 0; p < n; ++p) complement.selected[p] = rect.selected[p] ? 0 : 1;
  return {complement, rect};
}

MixedBatch random_cutout(const SmashedData& s, const OneHotLabel& y, double ratio,
                         const MechanismConfig& cfg, RngStream& rng) {
  validate_config(cfg);
  if (!(ratio > 0.0 && ratio <= 1.0))
    throw ParameterError("random_cutout: ratio must lie in (0, 1]");
  const std::size_t n = s.n_patches();
  const auto keep = std::min<std::size_t>(
      n, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n))));
  const auto perm = rng.permutation(static_cast<std::uint32_t>(n));
  PatchMask mask{std::vector<std::uint8_t>(n, 0)};
  for (std::size_t j = 0; j < keep; ++j) mask.selected[perm[j]] = 1;
  const double lambda = static_cast<double>(keep) / static_cast<double>(n);

  ClientRelease rel = release_cutmix_contribution(s, y, mask, lambda, cfg, rng);
  if (cfg.clamp_labels) clamp01(rel.label);
  MixedBatch out;
  out.smashed = SmashedData{std::move(rel.smashed), s.delta};
  out.label = std::move(rel.label);
  out.provenance = {Contribution{0, lambda, mask}};
  return out;
}

}  // namespace cutmixsl
