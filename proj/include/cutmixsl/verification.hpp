#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "cutmixsl/accountant.hpp"
#include "cutmixsl/splitmodel.hpp"

namespace cutmixsl {

struct McEstimate {
  double value = 0.0;
  double ci95_half_width = 0.0;
  std::size_t n_samples = 0;
};

// Orders above this explode the importance weights of the plain Monte Carlo
// estimator; callers get a ParameterError instead of a silently bad estimate.
constexpr double kMaxOracleAlpha = 16.0;

// Empirical order-alpha Renyi divergence between N(mu_p, sigma^2 I) and
// N(mu_q, sigma^2 I): samples x ~ Q and evaluates
//   (1/(alpha-1)) * ln E[(p(x)/q(x))^alpha]
// in log space with max subtraction. The CI is a bootstrap 95% interval.
McEstimate mc_renyi_divergence(std::span<const double> mu_p, std::span<const double> mu_q,
                               double sigma_sq, double alpha, std::size_t n_samples,
                               RngStream& rng);

struct WorstCaseCheck {
  double analytic = 0.0;     // accountant bound at the realized lambda_max
  McEstimate estimate;       // MC divergence of the actual release distribution
  double lambda_realized = 0.0;
};

// Builds the worst-case adjacent pair (replaced record differs by the pixel
// bound in every smashed coordinate and flips the one-hot label), pushes the
// replaced dataset through the real mechanism implementation sample by
// sample, and MC-estimates the divergence against the analytic bound.
// Dominance (estimate <= bound) must hold for every mechanism under
// unmasked_noise; under masked_noise the dp_sl and dp_cutmixsl smashed terms
// are tight.
WorstCaseCheck empirical_worstcase_check(const AccountantParams& p, Mechanism mech,
                                         NoiseMode noise_mode, std::size_t n_samples,
                                         RngStream& rng);

// Exhaustive subsampled-CDP minimizer over k in [k_lo, k_hi] under
// lambda_max = 1/k; ties resolve to the smaller k.
std::size_t grid_search_group_size(const AccountantParams& base, Mechanism mech,
                                   std::size_t k_lo, std::size_t k_hi);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t n_params = 0;
  bool pass = false;
};

// Central finite differences (step 1e-5) over every trainable parameter of a
// one-client model against the analytic backward pass. `corruption_factor`
// != 1 scales the largest analytic gradient entry first, as a mutation
// sentinel that must make the suite fail.
FiniteDiffReport finite_difference_suite(const ClientSegment& client,
                                         const ServerSegment& server, const Sample& sample,
                                         double tolerance, double corruption_factor = 1.0);

}  // namespace cutmixsl
