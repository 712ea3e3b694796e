#include "cutmixsl/accountant.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "cutmixsl/errors.hpp"
#include "cutmixsl/rng.hpp"

namespace cutmixsl {
namespace {

AccountantParams base_params() {
  AccountantParams p;
  p.alpha = 2.0;
  p.delta = 2e-4;
  p.pixel_bound = 1.0;
  p.d_s = 1;
  p.d_y = 2;
  p.sigma_s_sq = 1.0;
  p.sigma_y_sq = 1.0;
  p.n = 10;
  p.k = 2;
  p.lambda_max = 0.5;
  return p;
}

TEST(RdpComponents, ClosedFormValues) {
  AccountantParams p = base_params();
  const RdpComponents c = rdp_components(p);
  EXPECT_DOUBLE_EQ(c.smashed, 1.0);  // alpha Δ² D_s / (2σ²) = 2*1*1/2
  EXPECT_DOUBLE_EQ(c.label, 2.0);    // alpha D_y / (2σ²) = 2*2/2
}

TEST(RdpComponents, ZeroPixelBoundMeansIdenticalAdjacentMeans) {
  AccountantParams p = base_params();
  p.pixel_bound = 0.0;
  EXPECT_DOUBLE_EQ(rdp_components(p).smashed, 0.0);
}

TEST(RdpComponents, RejectsBadParameters) {
  AccountantParams p = base_params();
  p.sigma_s_sq = 0.0;
  EXPECT_THROW(rdp_components(p), ParameterError);
  p = base_params();
  p.alpha = 1.5;
  EXPECT_THROW(rdp_components(p), ParameterError);
  p.allow_real_alpha = true;  // continuous extension behind the flag
  EXPECT_NO_THROW(rdp_components(p));
  p.alpha = 1.0;
  EXPECT_THROW(rdp_components(p), ParameterError);
  p = base_params();
  p.lambda_max = 0.4;  // below 1/k
  EXPECT_THROW(rdp_components(p), ParameterError);
  p = base_params();
  p.k = 11;  // k > n
  EXPECT_THROW(rdp_components(p), ParameterError);
}

TEST(RdpBudget, HandEvaluatedTheoremFormulas) {
  // eps_s = 10, eps_y = 2, lambda_max = 0.5.
  AccountantParams p = base_params();
  p.d_s = 10;
  const RdpBudget sl = rdp_budget(p, Mechanism::dp_sl);
  const RdpBudget mix = rdp_budget(p, Mechanism::dp_mixsl);
  const RdpBudget cut = rdp_budget(p, Mechanism::dp_cutmixsl);
  EXPECT_DOUBLE_EQ(sl.epsilon, 12.0);
  EXPECT_DOUBLE_EQ(mix.epsilon, 3.0);
  EXPECT_DOUBLE_EQ(cut.epsilon, 5.5);
  EXPECT_DOUBLE_EQ(cut.components.smashed, 5.0);
  EXPECT_DOUBLE_EQ(cut.components.label, 0.5);
  EXPECT_DOUBLE_EQ(sl.components.smashed + sl.components.label, sl.epsilon);
}

TEST(RdpBudget, AllMechanismsCoincideAtFullWeight) {
  AccountantParams p = base_params();
  p.k = 1;
  p.lambda_max = 1.0;
  const double e1 = rdp_budget(p, Mechanism::dp_sl).epsilon;
  const double e2 = rdp_budget(p, Mechanism::dp_mixsl).epsilon;
  const double e3 = rdp_budget(p, Mechanism::dp_cutmixsl).epsilon;
  EXPECT_DOUBLE_EQ(e1, e2);
  EXPECT_DOUBLE_EQ(e1, e3);
}

TEST(RdpBudget, OrderingHoldsOnRandomDraws) {
  RngStream rng(123, {0, Role::server, 0});
  for (int t = 0; t < 1000; ++t) {
    AccountantParams p;
    p.alpha = 2.0 + static_cast<double>(rng.uniform_below(15));
    p.pixel_bound = 1e-3 + rng.uniform();
    p.d_s = 1 + rng.uniform_below(64);
    p.d_y = 1 + rng.uniform_below(16);
    p.sigma_s_sq = 1e-3 + 10.0 * rng.uniform();
    p.sigma_y_sq = 1e-3 + 10.0 * rng.uniform();
    p.k = 1 + rng.uniform_below(10);
    p.n = p.k + rng.uniform_below(10);
    p.lambda_max = 1.0 / static_cast<double>(p.k) +
                   (1.0 - 1.0 / static_cast<double>(p.k)) * rng.uniform();
    const double e1 = rdp_budget(p, Mechanism::dp_sl).epsilon;
    const double e2 = rdp_budget(p, Mechanism::dp_mixsl).epsilon;
    const double e3 = rdp_budget(p, Mechanism::dp_cutmixsl).epsilon;
    ASSERT_LE(e2, e3);
    ASSERT_LE(e3, e1);
  }
}

TEST(RdpBudget, MonotoneInLambdaAndSigma) {
  AccountantParams p = base_params();
  p.d_s = 10;
  const double base3 = rdp_budget(p, Mechanism::dp_cutmixsl).epsilon;
  AccountantParams hi = p;
  hi.lambda_max = 0.9;
  EXPECT_GE(rdp_budget(hi, Mechanism::dp_cutmixsl).epsilon, base3);
  AccountantParams noisier = p;
  noisier.sigma_s_sq *= 2.0;
  noisier.sigma_y_sq *= 2.0;
  for (const Mechanism m :
       {Mechanism::dp_sl, Mechanism::dp_mixsl, Mechanism::dp_cutmixsl}) {
    EXPECT_LT(rdp_budget(noisier, m).epsilon, rdp_budget(p, m).epsilon);
  }
}

TEST(RdpBudget, ScaleCovarianceOfThePixelBound) {
  AccountantParams p = base_params();
  p.d_s = 7;
  AccountantParams q = p;
  q.pixel_bound *= 2.0;
  q.sigma_s_sq *= 4.0;  // doubling the std doubles Δ/σ_s back to the original
  EXPECT_EQ(rdp_components(p).smashed, rdp_components(q).smashed);
}

TEST(RdpToCdp, ConversionTerm) {
  RdpBudget b;
  b.alpha = 2.0;
  b.epsilon = 0.0;
  EXPECT_DOUBLE_EQ(rdp_to_cdp(b, 1.0 / std::exp(1.0)).epsilon, 1.0);
  EXPECT_NEAR(cdp_conversion_term(2.0, 2e-4), 8.517193191416237, 1e-12);
  b.epsilon = 1.0;
  EXPECT_NEAR(rdp_to_cdp(b, 2e-4).epsilon, 9.517193191416237, 1e-12);
  EXPECT_THROW(rdp_to_cdp(b, 0.0), ParameterError);
  EXPECT_THROW(rdp_to_cdp(b, 1.0), ParameterError);
}

TEST(ComposeEpochs, LinearScaling) {
  AccountantParams p = base_params();
  const RdpBudget b = rdp_budget(p, Mechanism::dp_cutmixsl);
  const RdpBudget same = compose_epochs(b, 1);
  EXPECT_DOUBLE_EQ(same.epsilon, b.epsilon);
  RdpBudget tenth = b;
  tenth.epsilon = 0.3;
  EXPECT_DOUBLE_EQ(compose_epochs(tenth, 10).epsilon, 3.0);
  // Composition then conversion equals conversion of the composed budget.
  const double a = rdp_to_cdp(compose_epochs(b, 5), 2e-4).epsilon;
  const double expected = b.epsilon * 5.0 + cdp_conversion_term(b.alpha, 2e-4);
  EXPECT_DOUBLE_EQ(a, expected);
}

TEST(SubsampledCdp, FullGroupIsExactlyTheConvertedBudget) {
  AccountantParams p = base_params();
  p.k = p.n;
  p.lambda_max = 1.0 / static_cast<double>(p.k);
  const RdpBudget rdp = rdp_budget(p, Mechanism::dp_cutmixsl);
  const CdpBudget direct = rdp_to_cdp(rdp, p.delta);
  const CdpBudget sub = subsampled_cdp(p, Mechanism::dp_cutmixsl, p.delta);
  EXPECT_EQ(sub.epsilon, direct.epsilon);
}

TEST(SubsampledCdp, HighPrecisionAmplificationValue) {
  // ratio 0.2 and eps + eps_o = 0.5 -> ln(1 + 0.2 (e^0.5 - 1)).
  AccountantParams p = base_params();
  p.n = 10;
  p.k = 2;
  p.lambda_max = 0.5;
  p.alpha = 2.0;
  // Choose sigma so that eps_rdp(dp_sl) + eps_o = 0.5 exactly: with
  // delta = e^{-0.4}, eps_o = 0.4, so we need eps_rdp = 0.1.
  p.delta = std::exp(-0.4);
  p.pixel_bound = 1.0;
  p.d_s = 1;
  p.d_y = 1;
  p.sigma_s_sq = 20.0;  // eps_s = 2/(2*20) = 0.05
  p.sigma_y_sq = 20.0;  // eps_y = 0.05
  const CdpBudget sub = subsampled_cdp(p, Mechanism::dp_sl, p.delta);
  EXPECT_NEAR(sub.epsilon, 0.121991283339271, 1e-12);
}

TEST(SubsampledCdp, MonotoneInGroupSizeForDpSl) {
  AccountantParams p = base_params();
  p.n = 10;
  double prev = -1.0;
  for (std::size_t k = 1; k <= p.n; ++k) {
    p.k = k;
    p.lambda_max = 1.0;  // dp_sl budget does not depend on lambda
    const double eps = subsampled_cdp(p, Mechanism::dp_sl, p.delta).epsilon;
    EXPECT_GT(eps, prev);
    prev = eps;
  }
}

TEST(SubsampledCdp, NeverWorseThanUnsampled) {
  RngStream rng(7, {0, Role::server, 0});
  for (int t = 0; t < 200; ++t) {
    AccountantParams p = base_params();
    p.n = 2 + rng.uniform_below(30);
    p.k = 1 + rng.uniform_below(static_cast<std::uint32_t>(p.n));
    p.lambda_max = 1.0 / static_cast<double>(p.k);
    p.sigma_s_sq = 0.5 + 3.0 * rng.uniform();
    p.sigma_y_sq = 0.5 + 3.0 * rng.uniform();
    const double amplified = subsampled_cdp(p, Mechanism::dp_cutmixsl, p.delta).epsilon;
    const double plain = rdp_to_cdp(rdp_budget(p, Mechanism::dp_cutmixsl), p.delta).epsilon;
    ASSERT_LE(amplified, plain + 1e-12);
  }
}

TEST(SubsampledCdp, HidingInTheCrowdDirection) {
  // Under lambda_max = 1/k both mixing budgets strictly decrease with k.
  AccountantParams p = base_params();
  p.n = 12;
  double prev2 = 1e300, prev3 = 1e300;
  for (std::size_t k = 1; k <= p.n; ++k) {
    p.k = k;
    p.lambda_max = 1.0 / static_cast<double>(k);
    const double e2 = rdp_budget(p, Mechanism::dp_mixsl).epsilon;
    const double e3 = rdp_budget(p, Mechanism::dp_cutmixsl).epsilon;
    if (k > 1) {
      EXPECT_LT(e2, prev2);
      EXPECT_LT(e3, prev3);
    }
    prev2 = e2;
    prev3 = e3;
  }
}

TEST(OptimalGroupSize, ClosedForm) {
  EXPECT_DOUBLE_EQ(optimal_group_size(0.0, 1.0, 1.0, Mechanism::dp_cutmixsl), 1.0);
  EXPECT_DOUBLE_EQ(optimal_group_size(0.0, 4.0, 1.0, Mechanism::dp_cutmixsl), 2.0);
  EXPECT_DOUBLE_EQ(optimal_group_size(3.0, 1.0, 1.0, Mechanism::dp_mixsl), 2.0);
  EXPECT_THROW(optimal_group_size(1.0, 1.0, 1.0, Mechanism::dp_sl), UnsupportedError);
  EXPECT_THROW(optimal_group_size(1.0, 1.0, 0.0, Mechanism::dp_cutmixsl), ParameterError);
}

TEST(BudgetJson, SerializesTheContractFields) {
  AccountantParams p = base_params();
  const RdpBudget rdp = rdp_budget(p, Mechanism::dp_cutmixsl);
  const CdpBudget cdp = rdp_to_cdp(rdp, p.delta);
  const nlohmann::json j = budget_to_json(p, rdp, cdp);
  EXPECT_EQ(j.at("mechanism"), "dp_cutmixsl");
  EXPECT_DOUBLE_EQ(j.at("epsilon_rdp").get<double>(), rdp.epsilon);
  EXPECT_DOUBLE_EQ(j.at("epsilon_cdp").get<double>(), cdp.epsilon);
  EXPECT_TRUE(j.contains("components"));
  EXPECT_TRUE(j.contains("params"));
  EXPECT_DOUBLE_EQ(j.at("components").at("smashed").get<double>() +
                       j.at("components").at("label").get<double>(),
                   rdp.epsilon);
}

}  // namespace
}  // namespace cutmixsl
