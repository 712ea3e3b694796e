#include "cutmixsl/accountant.hpp"

#include <cmath>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {

namespace {

void validate_alpha(double alpha, bool allow_real) {
  if (allow_real) {
    if (!(alpha > 1.0)) throw ParameterError("accountant: alpha must be > 1");
    return;
  }
  if (!(alpha >= 2.0) || alpha != std::floor(alpha))
    throw ParameterError("accountant: alpha must be an integer >= 2 (set allow_real_alpha "
                         "for the continuous extension)");
}

}  // namespace

void validate_params(const AccountantParams& p) {
  validate_alpha(p.alpha, p.allow_real_alpha);
  // Zero is allowed: identical adjacent smashed means carry no budget.
  if (!(p.pixel_bound >= 0.0)) throw ParameterError("accountant: pixel bound must be >= 0");
  if (p.d_s < 1 || p.d_y < 1) throw ParameterError("accountant: dimensions must be >= 1");
  if (!(p.sigma_s_sq > 0.0) || !(p.sigma_y_sq > 0.0))
    throw ParameterError("accountant: noise variances must be > 0");
  if (p.k < 1 || p.k > p.n) throw ParameterError("accountant: need 1 <= k <= n");
  const double floor_lambda = 1.0 / static_cast<double>(p.k);
  if (!(p.lambda_max >= floor_lambda - 1e-12 && p.lambda_max <= 1.0 + 1e-12))
    throw ParameterError("accountant: lambda_max must lie in [1/k, 1]");
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw ParameterError("accountant: delta must be in (0,1)");
}

RdpComponents rdp_components(const AccountantParams& p) {
  validate_params(p);
  RdpComponents c;
  c.smashed = p.alpha * p.pixel_bound * p.pixel_bound * static_cast<double>(p.d_s) /
              (2.0 * p.sigma_s_sq);
  c.label = p.alpha * static_cast<double>(p.d_y) / (2.0 * p.sigma_y_sq);
  return c;
}

RdpBudget rdp_budget(const AccountantParams& p, Mechanism mech) {
  const RdpComponents base = rdp_components(p);
  const double lm = p.lambda_max;
  RdpBudget b;
  b.alpha = p.alpha;
  b.mechanism = mech;
  switch (mech) {
    case Mechanism::dp_sl:
      b.components = base;
      break;
    case Mechanism::dp_mixsl:
      b.components = {lm * lm * base.smashed, lm * lm * base.label};
      break;
    case Mechanism::dp_cutmixsl:
      b.components = {lm * base.smashed, lm * lm * base.label};
      break;
  }
  b.epsilon = b.components.smashed + b.components.label;
  return b;
}

double cdp_conversion_term(double alpha, double delta) {
  if (!(delta > 0.0 && delta < 1.0))
    throw ParameterError("cdp_conversion_term: delta must be in (0,1)");
  if (!(alpha > 1.0)) throw ParameterError("cdp_conversion_term: alpha must be > 1");
  return std::log(1.0 / delta) / (alpha - 1.0);
}

CdpBudget rdp_to_cdp(const RdpBudget& b, double delta) {
  return CdpBudget{b.epsilon + cdp_conversion_term(b.alpha, delta), delta};
}

RdpBudget compose_epochs(const RdpBudget& b, std::size_t t) {
  if (t < 1) throw ParameterError("compose_epochs: t must be >= 1");
  RdpBudget out = b;
  const double scale = static_cast<double>(t);
  out.epsilon = b.epsilon * scale;
  out.components.smashed = b.components.smashed * scale;
  out.components.label = b.components.label * scale;
  return out;
}

CdpBudget subsampled_cdp(const AccountantParams& p, Mechanism mech, double delta) {
  const RdpBudget rdp = rdp_budget(p, mech);
  const double eps = rdp.epsilon + cdp_conversion_term(p.alpha, delta);
  if (p.k == p.n) return CdpBudget{eps, delta};
  const double ratio = static_cast<double>(p.k) / static_cast<double>(p.n);
  return CdpBudget{std::log1p(ratio * std::expm1(eps)), delta};
}

double optimal_group_size(double eps_s, double eps_y, double eps_o, Mechanism mech) {
  if (!(eps_o > 0.0)) throw ParameterError("optimal_group_size: eps_o must be > 0");
  if (eps_s < 0.0 || eps_y < 0.0)
    throw ParameterError("optimal_group_size: components must be >= 0");
  switch (mech) {
    case Mechanism::dp_mixsl:
      return std::sqrt((eps_s + eps_y) / eps_o);
    case Mechanism::dp_cutmixsl:
      return std::sqrt(eps_y / eps_o);
    case Mechanism::dp_sl:
      break;
  }
  throw UnsupportedError("optimal_group_size: dp_sl has no interior optimum");
}

nlohmann::json budget_to_json(const AccountantParams& p, const RdpBudget& rdp,
                              const CdpBudget& cdp) {
  return nlohmann::json{
      {"mechanism", mechanism_name(rdp.mechanism)},
      {"alpha", rdp.alpha},
      {"delta", cdp.delta},
      {"epsilon_rdp", rdp.epsilon},
      {"epsilon_cdp", cdp.epsilon},
      {"components", {{"smashed", rdp.components.smashed}, {"label", rdp.components.label}}},
      {"params",
       {{"pixel_bound", p.pixel_bound},
        {"d_s", p.d_s},
        {"d_y", p.d_y},
        {"sigma_s_sq", p.sigma_s_sq},
        {"sigma_y_sq", p.sigma_y_sq},
        {"lambda_max", p.lambda_max},
        {"n", p.n},
        {"k", p.k}}},
  };
}

}  // namespace cutmixsl
