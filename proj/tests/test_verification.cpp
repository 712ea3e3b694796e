#include "cutmixsl/verification.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {
namespace {

TEST(McRenyi, IdenticalDistributionsEstimateZero) {
  RngStream rng(1, {0, Role::server, 0});
  const std::vector<double> mu = {0.3, -0.7, 1.1};
  const McEstimate est = mc_renyi_divergence(mu, mu, 1.0, 2.0, 50000, rng);
  EXPECT_EQ(est.value, 0.0);  // log ratio is identically zero
  EXPECT_EQ(est.n_samples, 50000u);
}

TEST(McRenyi, OneDimensionalClosedForm) {
  // D_alpha(N(1,1) || N(0,1)) = alpha * 1 / 2 = 1 at alpha = 2.
  RngStream rng(2, {0, Role::server, 0});
  const std::vector<double> mu_p = {1.0}, mu_q = {0.0};
  const McEstimate est = mc_renyi_divergence(mu_p, mu_q, 1.0, 2.0, 200000, rng);
  EXPECT_NEAR(est.value, 1.0, 3.0 * est.ci95_half_width);
  EXPECT_GT(est.ci95_half_width, 0.0);
}

TEST(McRenyi, QuadraticScalingInTheMeanGap) {
  RngStream rng_a(3, {0, Role::server, 0});
  RngStream rng_b(3, {0, Role::server, 0});
  const std::vector<double> q = {0.0};
  const McEstimate half = mc_renyi_divergence(std::vector<double>{0.5}, q, 1.0, 2.0,
                                              200000, rng_a);
  const McEstimate full = mc_renyi_divergence(std::vector<double>{1.0}, q, 1.0, 2.0,
                                              200000, rng_b);
  EXPECT_NEAR(full.value, 4.0 * half.value,
              3.0 * (full.ci95_half_width + 4.0 * half.ci95_half_width));
}

TEST(McRenyi, GuardsItsPreconditions) {
  RngStream rng(1, {0, Role::server, 0});
  const std::vector<double> a = {0.0}, b = {1.0};
  EXPECT_THROW(mc_renyi_divergence(a, b, 0.0, 2.0, 10000, rng), ParameterError);
  EXPECT_THROW(mc_renyi_divergence(a, b, 1.0, 17.0, 10000, rng), ParameterError);
  EXPECT_THROW(mc_renyi_divergence(a, b, 1.0, 2.0, 500, rng), ParameterError);
  const std::vector<double> c = {1.0, 2.0};
  EXPECT_THROW(mc_renyi_divergence(a, c, 1.0, 2.0, 10000, rng), DimensionError);
}

AccountantParams oracle_params() {
  AccountantParams p;
  p.alpha = 2.0;
  p.delta = 2e-4;
  p.pixel_bound = 1.0;
  p.d_s = 2;
  p.d_y = 2;
  p.sigma_s_sq = 2.0;
  p.sigma_y_sq = 2.0;
  p.n = 10;
  p.k = 1;
  p.lambda_max = 1.0;
  return p;
}

TEST(WorstCase, DpSlGaussianBoundIsTight) {
  // analytic: 2*(1*2)/(2*2) + 2*2/(2*2) = 1 + 1 = 2; the worst-case pair
  // realizes both norms exactly, so the MC estimate must sit on the bound.
  AccountantParams p = oracle_params();
  RngStream rng(4, {0, Role::server, 0});
  const WorstCaseCheck check =
      empirical_worstcase_check(p, Mechanism::dp_sl, NoiseMode::masked_noise, 200000, rng);
  EXPECT_DOUBLE_EQ(check.analytic, 2.0);
  EXPECT_NEAR(check.estimate.value, check.analytic, 3.0 * check.estimate.ci95_half_width);
}

TEST(WorstCase, MixingMechanismsAreDominated) {
  AccountantParams p = oracle_params();
  p.k = 2;
  p.lambda_max = 0.5;
  RngStream rng(5, {0, Role::server, 0});
  const WorstCaseCheck mix = empirical_worstcase_check(p, Mechanism::dp_mixsl,
                                                       NoiseMode::masked_noise, 100000, rng);
  EXPECT_LE(mix.estimate.value, mix.analytic + 3.0 * mix.estimate.ci95_half_width);
  // The mixup bound is loose by the stacked-noise factor k.
  EXPECT_LT(mix.estimate.value, 0.75 * mix.analytic);

  const WorstCaseCheck cut = empirical_worstcase_check(p, Mechanism::dp_cutmixsl,
                                                       NoiseMode::unmasked_noise, 100000, rng);
  EXPECT_LE(cut.estimate.value, cut.analytic + 3.0 * cut.estimate.ci95_half_width);
}

TEST(WorstCase, CutmixMaskedSmashedTermIsTightInTheEqualityConfiguration) {
  // k=2, uniform masks, D_y = 4: the smashed term is exact under masked
  // noise and the label term hits D_y * sum(lambda^2) = 2 = ||flip||^2, so
  // the whole bound is an equality case.
  AccountantParams p = oracle_params();
  p.k = 2;
  p.lambda_max = 0.5;
  p.d_y = 4;
  RngStream rng(6, {0, Role::server, 0});
  const WorstCaseCheck check = empirical_worstcase_check(p, Mechanism::dp_cutmixsl,
                                                         NoiseMode::masked_noise, 200000, rng);
  EXPECT_DOUBLE_EQ(check.lambda_realized, 0.5);
  EXPECT_NEAR(check.estimate.value, check.analytic, 3.0 * check.estimate.ci95_half_width);
}

// Under the protocol-equation release the label noise arrives scaled by
// lambda_i, so its variance is sum(lambda^2) sigma_y^2 < sigma_y^2 and the
// summary-table label budget lambda_max^2 * eps_y no longer dominates the
// true divergence once D_y * sum(lambda^2) < ||flip||^2. Pin that gap.
TEST(WorstCase, MaskedLabelNoiseAttenuationExceedsTheSummaryBound) {
  AccountantParams p = oracle_params();
  p.k = 4;
  p.n = 10;
  p.lambda_max = 0.25;
  p.d_y = 2;
  p.sigma_s_sq = 1e6;  // silence the smashed term
  p.sigma_y_sq = 2.0;
  p.d_s = 4;
  RngStream rng(7, {0, Role::server, 0});
  const WorstCaseCheck check = empirical_worstcase_check(p, Mechanism::dp_cutmixsl,
                                                         NoiseMode::masked_noise, 200000, rng);
  // True label divergence: a*l^2*2/(2*(1/4)*s2) = 4x the bound a*l^2*2/(2*s2).
  EXPECT_GT(check.estimate.value, check.analytic + 3.0 * check.estimate.ci95_half_width);
  EXPECT_NEAR(check.estimate.value, 4.0 * check.analytic, 0.1 * check.analytic);
  // The summary-table form restores dominance for the same parameters.
  RngStream rng2(8, {0, Role::server, 0});
  const WorstCaseCheck table = empirical_worstcase_check(
      p, Mechanism::dp_cutmixsl, NoiseMode::unmasked_noise, 200000, rng2);
  EXPECT_LE(table.estimate.value, table.analytic + 3.0 * table.estimate.ci95_half_width);
}

TEST(WorstCase, DominanceHoldsOverRandomDrawsUnderTheSummaryModel) {
  RngStream rng(9, {0, Role::server, 0});
  for (int d = 0; d < 100; ++d) {
    AccountantParams p;
    p.alpha = 2.0 + static_cast<double>(rng.uniform_below(3));
    p.delta = 2e-4;
    p.pixel_bound = 0.2 + 0.8 * rng.uniform();
    p.d_s = 2 + rng.uniform_below(7);
    p.d_y = 1 + rng.uniform_below(4);
    p.sigma_s_sq = 2.0 + 4.0 * rng.uniform();
    p.sigma_y_sq = 2.0 + 4.0 * rng.uniform();
    p.k = 1 + rng.uniform_below(3);
    p.n = 10;
    // Keep lambda_max * d_s on the patch grid so the masks realize it.
    const std::size_t owned = 1 + rng.uniform_below(static_cast<std::uint32_t>(p.d_s));
    p.lambda_max = static_cast<double>(owned) / static_cast<double>(p.d_s);
    if (p.lambda_max < 1.0 / static_cast<double>(p.k)) p.lambda_max = 1.0;
    const Mechanism mech = d % 3 == 0   ? Mechanism::dp_sl
                           : d % 3 == 1 ? Mechanism::dp_mixsl
                                        : Mechanism::dp_cutmixsl;
    const WorstCaseCheck check =
        empirical_worstcase_check(p, mech, NoiseMode::unmasked_noise, 20000, rng);
    ASSERT_LE(check.estimate.value,
              check.analytic + 3.0 * std::max(check.estimate.ci95_half_width, 1e-3))
        << mechanism_name(mech) << " draw " << d;
  }
}

TEST(GridSearch, MatchesTheClosedFormInTheSmallBudgetRegime) {
  // The closed-form optimum comes from the eps + eps_o << 1 linearization of
  // the amplification formula, so the draws stay inside that regime; with
  // eps_o large the exact discrete optimum drifts above sqrt(eps_y/eps_o).
  RngStream rng(10, {0, Role::server, 0});
  for (int d = 0; d < 100; ++d) {
    AccountantParams p;
    p.alpha = 2.0 + static_cast<double>(rng.uniform_below(3));
    const double eps_o = 0.02 + 0.1 * rng.uniform();
    p.delta = std::exp(-eps_o * (p.alpha - 1.0));
    p.n = 400;
    p.k = 1;
    p.lambda_max = 1.0;
    p.pixel_bound = 1.0;
    p.d_y = 2;
    // eps_y = alpha*d_y/(2 sigma_y^2) = target ratio * eps_o
    const double ratio = 1.0 + 49.0 * rng.uniform();
    p.sigma_y_sq = p.alpha * static_cast<double>(p.d_y) / (2.0 * ratio * eps_o);
    p.d_s = 4;
    p.sigma_s_sq = 150.0 + 150.0 * rng.uniform();
    const Mechanism mech = d % 2 == 0 ? Mechanism::dp_mixsl : Mechanism::dp_cutmixsl;
    const RdpComponents base = rdp_components(p);
    const double k_star = optimal_group_size(base.smashed, base.label, eps_o, mech);
    const std::size_t grid = grid_search_group_size(p, mech, 1, p.n);
    EXPECT_GE(static_cast<double>(grid), std::floor(k_star) - 1.0) << "draw " << d;
    EXPECT_LE(static_cast<double>(grid), std::ceil(k_star) + 1.0) << "draw " << d;
  }
}

TEST(GridSearch, ConcreteQuarterRatioCase) {
  // eps_y = 4 eps_o -> k*_3 = 2; the discrete optimum is 2 as well.
  AccountantParams p;
  p.alpha = 2.0;
  p.delta = std::exp(-0.1);  // eps_o = 0.1
  p.n = 100;
  p.k = 1;
  p.lambda_max = 1.0;
  p.pixel_bound = 1.0;
  p.d_s = 4;
  p.sigma_s_sq = 1e7;
  p.d_y = 2;
  p.sigma_y_sq = 2.0 * 2.0 / (2.0 * 0.4);  // eps_y = 0.4 = 4 * eps_o
  const RdpComponents base = rdp_components(p);
  EXPECT_NEAR(optimal_group_size(base.smashed, base.label, 0.1, Mechanism::dp_cutmixsl), 2.0,
              1e-9);
  EXPECT_EQ(grid_search_group_size(p, Mechanism::dp_cutmixsl, 1, 100), 2u);
}

TEST(GridSearch, DpSlPrefersTheSmallestGroup) {
  AccountantParams p = oracle_params();
  p.n = 50;
  EXPECT_EQ(grid_search_group_size(p, Mechanism::dp_sl, 1, 50), 1u);
  EXPECT_EQ(grid_search_group_size(p, Mechanism::dp_sl, 7, 7), 7u);  // singleton range
  EXPECT_THROW(grid_search_group_size(p, Mechanism::dp_sl, 5, 4), ParameterError);
  EXPECT_THROW(grid_search_group_size(p, Mechanism::dp_sl, 1, 51), ParameterError);
}

Sample fd_sample(std::size_t n_patches, std::size_t patch_dim, std::size_t classes,
                 RngStream& rng) {
  Sample s;
  s.input = Matrix(n_patches, patch_dim);
  for (double& v : s.input.data) v = rng.normal(1.0);
  s.label = one_hot(classes, rng.uniform_below(classes));
  return s;
}

TEST(FiniteDifferenceSuite, ZeroWeightModelPasses) {
  ClientSegment client;
  client.embed_w = Matrix(3, 4, 0.0);
  client.embed_b.assign(4, 0.0);
  client.delta = 1.0;
  ServerSegment server;
  server.hidden_w = Matrix(8, 6, 0.0);
  server.hidden_b.assign(6, 0.0);
  server.out_w = Matrix(6, 2, 0.0);
  server.out_b.assign(2, 0.0);
  RngStream rng(11, {0, Role::client, 0});
  const Sample sample = fd_sample(2, 3, 2, rng);
  const FiniteDiffReport report = finite_difference_suite(client, server, sample, 1e-5);
  EXPECT_TRUE(report.pass);
}

TEST(FiniteDifferenceSuite, RandomModelSeedSevenPasses) {
  RngStream rng(7, {0, Role::client, 0});
  const ClientSegment client = make_client_segment(4, 6, 1.0, 0.5, rng);
  const ServerSegment server = make_server_segment(5, 6, 12, 3, 0.5, rng);
  const Sample sample = fd_sample(5, 4, 3, rng);
  const FiniteDiffReport report = finite_difference_suite(client, server, sample, 1e-5);
  EXPECT_TRUE(report.pass) << report.max_rel_error;
}

TEST(FiniteDifferenceSuite, MutationSentinelFails) {
  RngStream rng(7, {0, Role::client, 0});
  const ClientSegment client = make_client_segment(4, 6, 1.0, 0.5, rng);
  const ServerSegment server = make_server_segment(5, 6, 12, 3, 0.5, rng);
  const Sample sample = fd_sample(5, 4, 3, rng);
  const FiniteDiffReport report =
      finite_difference_suite(client, server, sample, 1e-5, 1.01);
  EXPECT_FALSE(report.pass);
}

}  // namespace
}  // namespace cutmixsl
