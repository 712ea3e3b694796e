#include "cutmixsl/verification.hpp"

#include <algorithm>
#include <cmath>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {

namespace {

void validate_oracle_alpha(double alpha) {
  if (!(alpha > 1.0)) throw ParameterError("mc oracle: alpha must be > 1");
  if (alpha > kMaxOracleAlpha)
    throw ParameterError("mc oracle: alpha capped at 16 (importance weights explode)");
}

// Log-space mean with max subtraction plus bootstrap CI over the precomputed
// weights. Returns the final divergence (divide by alpha-1 outside).
McEstimate reduce_log_weights(std::vector<double>& w, double alpha, RngStream& rng) {
  const std::size_t n = w.size();
  double max_w = w[0];
  for (const double x : w) max_w = std::max(max_w, x);
  if (!std::isfinite(max_w))
    throw NumericError("mc oracle: non-finite log weight despite log-space evaluation");
  std::vector<double> u(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = std::exp(w[i] - max_w);
    sum += u[i];
  }
  if (!(sum > 0.0)) throw NumericError("mc oracle: all importance weights underflowed");
  const double inv_a1 = 1.0 / (alpha - 1.0);
  McEstimate est;
  est.n_samples = n;
  est.value = (std::log(sum / static_cast<double>(n)) + max_w) * inv_a1;

  constexpr std::size_t kBootstrap = 200;
  std::vector<double> replicates(kBootstrap);
  for (std::size_t b = 0; b < kBootstrap; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += u[rng.uniform_below(n)];
    replicates[b] = (std::log(s / static_cast<double>(n)) + max_w) * inv_a1;
  }
  std::sort(replicates.begin(), replicates.end());
  const auto lo = static_cast<std::size_t>(0.025 * (kBootstrap - 1));
  const auto hi = static_cast<std::size_t>(0.975 * (kBootstrap - 1));
  est.ci95_half_width = 0.5 * (replicates[hi] - replicates[lo]);
  return est;
}

}  // namespace

McEstimate mc_renyi_divergence(std::span<const double> mu_p, std::span<const double> mu_q,
                               double sigma_sq, double alpha, std::size_t n_samples,
                               RngStream& rng) {
  if (mu_p.size() != mu_q.size()) throw DimensionError("mc_renyi_divergence: dim mismatch");
  if (!(sigma_sq > 0.0)) throw ParameterError("mc_renyi_divergence: sigma_sq must be > 0");
  if (n_samples < 1000) throw ParameterError("mc_renyi_divergence: need >= 1000 samples");
  validate_oracle_alpha(alpha);

  const std::size_t dim = mu_p.size();
  const double inv_two_var = 1.0 / (2.0 * sigma_sq);
  std::vector<double> w(n_samples);
  std::vector<double> x(dim);
  for (std::size_t i = 0; i < n_samples; ++i) {
    for (std::size_t d = 0; d < dim; ++d) x[d] = mu_q[d] + rng.normal(sigma_sq);
    // log p(x) - log q(x) for equal isotropic covariances
    const double log_ratio =
        (squared_distance(x, mu_q) - squared_distance(x, mu_p)) * inv_two_var;
    w[i] = alpha * log_ratio;
  }
  return reduce_log_weights(w, alpha, rng);
}

namespace {

struct ReleaseModel {
  // Per-coordinate noise variance of the released smashed tensor and label.
  double var_s = 0.0;
  double var_y = 0.0;
  // Means under the two adjacent datasets.
  std::vector<double> mu_s_base, mu_s_repl;
  std::vector<double> mu_y_base, mu_y_repl;
};

}  // namespace

WorstCaseCheck empirical_worstcase_check(const AccountantParams& p, Mechanism mech,
                                         NoiseMode noise_mode, std::size_t n_samples,
                                         RngStream& rng) {
  validate_params(p);
  validate_oracle_alpha(p.alpha);
  if (n_samples < 1000) throw ParameterError("empirical_worstcase_check: need >= 1000 samples");

  const std::size_t k = p.k;
  const std::size_t d_s = p.d_s;
  const std::size_t d_y = p.d_y;
  const double delta = p.pixel_bound;

  // One coordinate per patch (F = 1) so masks act at coordinate granularity.
  const auto owned = static_cast<std::size_t>(std::llround(p.lambda_max * static_cast<double>(d_s)));
  if (mech != Mechanism::dp_mixsl && (owned < 1 || owned > d_s))
    throw ParameterError("empirical_worstcase_check: lambda_max*d_s must round inside [1, d_s]");

  // Worst-case adjacent pair: the replaced record moves by delta in every
  // coordinate, its one-hot label flips (a single coordinate for d_y = 1).
  const Matrix zeros(d_s, 1, 0.0);
  const Matrix deltas(d_s, 1, delta);
  OneHotLabel y_base = one_hot(d_y, 0);
  OneHotLabel y_repl;
  y_repl.values.assign(d_y, 0.0);
  if (d_y >= 2) y_repl.values[1] = 1.0;

  // Masks: replaced client owns `owned` patches, the rest split as evenly as
  // possible among the other contributors.
  std::vector<PatchMask> masks;
  MixRatios ratios;
  double lambda_realized = p.lambda_max;
  if (mech == Mechanism::dp_cutmixsl) {
    masks.assign(k, PatchMask{std::vector<std::uint8_t>(d_s, 0)});
    if (k == 1) {
      for (std::size_t c = 0; c < d_s; ++c) masks[0].selected[c] = 1;
    } else {
      for (std::size_t c = 0; c < owned; ++c) masks[0].selected[c] = 1;
      for (std::size_t c = owned; c < d_s; ++c)
        masks[1 + (c - owned) % (k - 1)].selected[c] = 1;
    }
    ratios = realized_ratios(masks);
    lambda_realized = ratios.lambdas[0];
  } else if (mech == Mechanism::dp_mixsl) {
    ratios.lambdas.assign(k, k == 1 ? 1.0 : (1.0 - p.lambda_max) / static_cast<double>(k - 1));
    ratios.lambdas[0] = p.lambda_max;
    if (k == 1) ratios.lambdas[0] = 1.0;
    ratios.source = RatioSource::realized;
    lambda_realized = ratios.lambdas[0];
  }

  MechanismConfig cfg;
  cfg.sigma_s_sq = p.sigma_s_sq;
  cfg.sigma_y_sq = p.sigma_y_sq;
  cfg.noise_mode = noise_mode;
  cfg.clamp_labels = false;  // the Gaussian analysis assumes unclamped noise

  // Remaining contributors hold the all-zero record in both datasets.
  std::vector<SmashedData> records_base, records_repl;
  std::vector<OneHotLabel> labels_base, labels_repl;
  for (std::size_t i = 0; i < k; ++i) {
    records_base.push_back(SmashedData{zeros, delta});
    records_repl.push_back(SmashedData{i == 0 ? deltas : zeros, delta});
    labels_base.push_back(y_base);
    labels_repl.push_back(i == 0 ? y_repl : y_base);
  }

  // Release means and per-coordinate variances of the implemented mechanism.
  ReleaseModel model;
  model.mu_s_base.assign(d_s, 0.0);
  model.mu_s_repl.assign(d_s, 0.0);
  model.mu_y_base.assign(d_y, 0.0);
  model.mu_y_repl.assign(d_y, 0.0);
  const auto kd = static_cast<double>(k);
  switch (mech) {
    case Mechanism::dp_sl: {
      model.var_s = p.sigma_s_sq;
      model.var_y = p.sigma_y_sq;
      for (std::size_t c = 0; c < d_s; ++c) model.mu_s_repl[c] = delta;
      model.mu_y_base = y_base.values;
      model.mu_y_repl = y_repl.values;
      break;
    }
    case Mechanism::dp_mixsl: {
      model.var_s = kd * p.sigma_s_sq;
      model.var_y = kd * p.sigma_y_sq;
      for (std::size_t c = 0; c < d_s; ++c) model.mu_s_repl[c] = lambda_realized * delta;
      // Label mean is the full convex combination; the non-replaced clients
      // contribute (1 - lambda) y_base to both hypotheses.
      for (std::size_t c = 0; c < d_y; ++c) {
        model.mu_y_base[c] = y_base.values[c];
        model.mu_y_repl[c] = lambda_realized * y_repl.values[c] +
                             (1.0 - lambda_realized) * y_base.values[c];
      }
      break;
    }
    case Mechanism::dp_cutmixsl: {
      model.var_s = noise_mode == NoiseMode::masked_noise ? p.sigma_s_sq : kd * p.sigma_s_sq;
      if (noise_mode == NoiseMode::masked_noise) {
        double sum_sq = 0.0;
        for (const double l : ratios.lambdas) sum_sq += l * l;
        model.var_y = sum_sq * p.sigma_y_sq;
      } else {
        model.var_y = kd * p.sigma_y_sq;
      }
      for (std::size_t c = 0; c < d_s; ++c)
        if (masks[0].covers(c)) model.mu_s_repl[c] = delta;
      for (std::size_t c = 0; c < d_y; ++c) {
        model.mu_y_base[c] = y_base.values[c];
        model.mu_y_repl[c] = lambda_realized * y_repl.values[c] +
                             (1.0 - lambda_realized) * y_base.values[c];
      }
      break;
    }
  }
  if (!(model.var_s > 0.0) || !(model.var_y > 0.0))
    throw ParameterError("empirical_worstcase_check: degenerate release variance");

  // Sample from the replaced dataset by running the real mechanism; score
  // the exact Gaussian log densities of both hypotheses.
  const double inv_two_s = 1.0 / (2.0 * model.var_s);
  const double inv_two_y = 1.0 / (2.0 * model.var_y);
  std::vector<double> w(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    MixedBatch release;
    switch (mech) {
      case Mechanism::dp_sl:
        release = dp_sl(records_repl[0], labels_repl[0], cfg, rng);
        break;
      case Mechanism::dp_mixsl:
        release = dp_mix(records_repl, labels_repl, ratios, cfg, rng);
        break;
      case Mechanism::dp_cutmixsl:
        release = dp_cutmix(records_repl, labels_repl, masks, cfg, rng);
        break;
    }
    const double log_ratio =
        (squared_distance(release.smashed.values.data, model.mu_s_repl) -
         squared_distance(release.smashed.values.data, model.mu_s_base)) *
            inv_two_s +
        (squared_distance(release.label, model.mu_y_repl) -
         squared_distance(release.label, model.mu_y_base)) *
            inv_two_y;
    w[i] = p.alpha * log_ratio;
  }

  WorstCaseCheck check;
  check.lambda_realized = lambda_realized;
  AccountantParams bound_params = p;
  bound_params.lambda_max = std::min(1.0, std::max(1.0 / kd, lambda_realized));
  check.analytic = rdp_budget(bound_params, mech).epsilon;
  check.estimate = reduce_log_weights(w, p.alpha, rng);
  return check;
}

std::size_t grid_search_group_size(const AccountantParams& base, Mechanism mech,
                                   std::size_t k_lo, std::size_t k_hi) {
  if (k_lo < 1 || k_hi < k_lo || k_hi > base.n)
    throw ParameterError("grid_search_group_size: empty or out-of-range k range");
  std::size_t best_k = 0;
  double best_eps = 0.0;
  for (std::size_t k = k_lo; k <= k_hi; ++k) {
    AccountantParams q = base;
    q.k = k;
    q.lambda_max = 1.0 / static_cast<double>(k);
    const double eps = subsampled_cdp(q, mech, q.delta).epsilon;
    if (best_k == 0 || eps < best_eps) {
      best_k = k;
      best_eps = eps;
    }
  }
  return best_k;
}

namespace {

double pipeline_loss(const ClientSegment& client, const ServerSegment& server,
                     const Sample& sample) {
  MixedBatch b;
  b.smashed = client_forward(sample.input, client);
  b.label = sample.label.values;
  b.provenance = {Contribution{0, 1.0, std::nullopt}};
  return server_forward(b, server).loss;
}

}  // namespace

FiniteDiffReport finite_difference_suite(const ClientSegment& client,
                                         const ServerSegment& server, const Sample& sample,
                                         double tolerance, double corruption_factor) {
  constexpr double kStep = 1e-5;

  // Analytic gradients through the full split pipeline.
  const ClientForwardCache cache = client_forward_cached(sample.input, client, 0);
  MixedBatch batch;
  batch.smashed = cache.smashed;
  batch.label = sample.label.values;
  batch.provenance = {Contribution{0, 1.0, std::nullopt}};
  const ServerForward fwd = server_forward(batch, server);
  ServerGrads sg = server_backward(batch, server, fwd);
  ClientGrads cg = client_backward(sg.cut_grad, cache, client, 0);

  // Flatten analytic gradients in declaration order.
  std::vector<double*> analytic;
  for (double& v : cg.embed_w_g.data) analytic.push_back(&v);
  for (double& v : cg.embed_b_g) analytic.push_back(&v);
  for (double& v : sg.hidden_w_g.data) analytic.push_back(&v);
  for (double& v : sg.hidden_b_g) analytic.push_back(&v);
  for (double& v : sg.out_w_g.data) analytic.push_back(&v);
  for (double& v : sg.out_b_g) analytic.push_back(&v);

  if (corruption_factor != 1.0) {
    double* largest = analytic.front();
    for (double* v : analytic) {
      if (std::abs(*v) > std::abs(*largest)) largest = v;
    }
    *largest *= corruption_factor;
  }

  // Matching list of parameter locations on mutable copies.
  ClientSegment c2 = client;
  ServerSegment s2 = server;
  std::vector<double*> params;
  for (double& v : c2.embed_w.data) params.push_back(&v);
  for (double& v : c2.embed_b) params.push_back(&v);
  for (double& v : s2.hidden_w.data) params.push_back(&v);
  for (double& v : s2.hidden_b) params.push_back(&v);
  for (double& v : s2.out_w.data) params.push_back(&v);
  for (double& v : s2.out_b) params.push_back(&v);

  FiniteDiffReport report;
  report.n_params = params.size();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = *params[i];
    *params[i] = saved + kStep;
    const double up = pipeline_loss(c2, s2, sample);
    *params[i] = saved - kStep;
    const double down = pipeline_loss(c2, s2, sample);
    *params[i] = saved;
    const double fd = (up - down) / (2.0 * kStep);
    const double denom = std::max({std::abs(fd), std::abs(*analytic[i]), 1e-4});
    const double rel = std::abs(fd - *analytic[i]) / denom;
    report.max_rel_error = std::max(report.max_rel_error, rel);
  }
  report.pass = report.max_rel_error <= tolerance;
  return report;
}

}  // namespace cutmixsl
