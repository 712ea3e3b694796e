#pragma once

#include <cstdint>

#include "json.hpp"

#include "cutmixsl/mechanisms.hpp"

namespace cutmixsl {

// Smashed/label split of an RDP budget after mechanism weighting; the total
// epsilon is always the sum of the two parts.
struct RdpComponents {
  double smashed = 0.0;
  double label = 0.0;
};

struct RdpBudget {
  double alpha = 2.0;
  double epsilon = 0.0;
  Mechanism mechanism = Mechanism::dp_sl;
  RdpComponents components;
};

struct CdpBudget {
  double epsilon = 0.0;
  double delta = 0.0;
};

// Inputs of the closed-form accountant. `lambda_max` is the realized maximum
// mixing weight (in [1/k, 1]); `pixel_bound` is the entrywise bound on the
// smashed data. Orders are integers >= 2 unless `allow_real_alpha` opts into
// the continuous extension (alpha > 1).
struct AccountantParams {
  double alpha = 2.0;
  double delta = 2e-4;
  double pixel_bound = 0.15;
  std::size_t d_s = 10;
  std::size_t d_y = 2;
  double sigma_s_sq = 1.0;
  double sigma_y_sq = 1.0;
  double lambda_max = 0.5;
  std::size_t n = 10;
  std::size_t k = 2;
  bool allow_real_alpha = false;
};

void validate_params(const AccountantParams& p);

// Base per-record budgets of the single-release Gaussian mechanism:
//   smashed: alpha * Delta^2 * D_s / (2 sigma_s^2)
//   label:   alpha * D_y / (2 sigma_y^2)
RdpComponents rdp_components(const AccountantParams& p);

// Mechanism budgets:
//   dp_sl:       eps_s + eps_y
//   dp_mixsl:    lambda_max^2 (eps_s + eps_y)
//   dp_cutmixsl: lambda_max (eps_s + lambda_max eps_y)
// For any fixed parameters these satisfy eps_mixsl <= eps_cutmixsl <= eps_sl.
RdpBudget rdp_budget(const AccountantParams& p, Mechanism mech);

// Conversion term eps_o(delta) = ln(1/delta) / (alpha - 1).
double cdp_conversion_term(double alpha, double delta);

// (alpha, eps)-RDP implies (eps + ln(1/delta)/(alpha-1), delta)-CDP.
CdpBudget rdp_to_cdp(const RdpBudget& b, double delta);

// Linear sequential composition over t epochs at fixed order.
RdpBudget compose_epochs(const RdpBudget& b, std::size_t t);

// CDP budget of the subsampled mechanism that mixes k of n records:
//   eps' = ln(1 + (k/n) (e^{eps(alpha) + eps_o(delta)} - 1)),
// exactly eps + eps_o at k = n.
CdpBudget subsampled_cdp(const AccountantParams& p, Mechanism mech, double delta);

// Continuous minimizer of k*(eps(alpha; lambda=1/k) + eps_o):
//   dp_mixsl:    sqrt((eps_s + eps_y) / eps_o)
//   dp_cutmixsl: sqrt(eps_y / eps_o)
// dp_sl has no interior optimum and is rejected.
double optimal_group_size(double eps_s, double eps_y, double eps_o, Mechanism mech);

// JSON record {mechanism, alpha, delta, epsilon_rdp, epsilon_cdp, components,
// params} consumed by the CLI and test fixtures.
nlohmann::json budget_to_json(const AccountantParams& p, const RdpBudget& rdp,
                              const CdpBudget& cdp);

}  // namespace cutmixsl
