#include "cutmixsl/core.hpp"

#include <cmath>

#include <gtest/gtest.h>

#include "cutmixsl/errors.hpp"

namespace cutmixsl {
namespace {

TEST(RngStream, IdenticalStreamsReplayBitExactly) {
  RngStream a(42, {3, Role::client, 7});
  RngStream b(42, {3, Role::client, 7});
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(a.next_u64(), b.next_u64());
  }
  RngStream c(42, {3, Role::client, 7});
  RngStream d(42, {3, Role::client, 7});
  for (int i = 0; i < 100; ++i) {
    EXPECT_EQ(c.normal(2.5), d.normal(2.5));
    EXPECT_EQ(c.gamma(0.7), d.gamma(0.7));
  }
}

TEST(RngStream, DistinctStreamIdsDecorrelate) {
  RngStream a(42, {3, Role::client, 7});
  RngStream b(42, {3, Role::client, 8});
  RngStream c(42, {4, Role::client, 7});
  RngStream d(42, {3, Role::mixer, 7});
  const std::uint64_t va = a.next_u64();
  EXPECT_NE(va, b.next_u64());
  EXPECT_NE(va, c.next_u64());
  EXPECT_NE(va, d.next_u64());
}

TEST(RngStream, GammaMomentsRoughlyCorrect) {
  RngStream rng(7, {0, Role::mixer, 0});
  const double shape = 2.5;
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) sum += rng.gamma(shape);
  EXPECT_NEAR(sum / n, shape, 0.02);
}

TEST(SampleMixRatios, SingleClientIsDegenerate) {
  RngStream rng(1, {0, Role::mixer, 0});
  const MixRatios r = sample_mix_ratios(1, 123.0, rng);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r.lambdas[0], 1.0);
  EXPECT_EQ(r.source, RatioSource::dirichlet_draw);
}

TEST(SampleMixRatios, LargeConcentrationMeanMatchesSymmetricDirichlet) {
  RngStream rng(2024, {0, Role::mixer, 0});
  double sum_first = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum_first += sample_mix_ratios(2, 50.0, rng).lambdas[0];
  EXPECT_NEAR(sum_first / n, 0.5, 0.01);
}

TEST(SampleMixRatios, SeededTripleReplaysBitExactly) {
  RngStream a(42, {0, Role::mixer, 0});
  RngStream b(42, {0, Role::mixer, 0});
  const MixRatios ra = sample_mix_ratios(3, 2.0, a);
  const MixRatios rb = sample_mix_ratios(3, 2.0, b);
  ASSERT_EQ(ra.size(), 3u);
  double sum = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ra.lambdas[i], rb.lambdas[i]);
    sum += ra.lambdas[i];
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(SampleMixRatios, NormalizationHoldsOverRandomDraws) {
  RngStream rng(5, {0, Role::mixer, 0});
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 1 + rng.uniform_below(8);
    const double alpha = 0.2 + 5.0 * rng.uniform();
    const MixRatios r = sample_mix_ratios(k, alpha, rng);
    double sum = 0.0;
    for (const double l : r.lambdas) {
      EXPECT_GE(l, 0.0);
      sum += l;
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(SampleMixRatios, RejectsBadParameters) {
  RngStream rng(1, {0, Role::mixer, 0});
  EXPECT_THROW(sample_mix_ratios(0, 1.0, rng), ParameterError);
  EXPECT_THROW(sample_mix_ratios(2, 0.0, rng), ParameterError);
  EXPECT_THROW(sample_mix_ratios(2, -1.0, rng), ParameterError);
}

std::vector<std::size_t> mask_sizes(const std::vector<PatchMask>& masks) {
  std::vector<std::size_t> sizes;
  for (const auto& m : masks) sizes.push_back(m.count());
  return sizes;
}

TEST(AllocateMasks, EvenSplit) {
  RngStream rng(1, {0, Role::mixer, 0});
  const MixRatios r{{0.5, 0.5}, RatioSource::dirichlet_draw};
  const auto masks = allocate_masks(r, 64, rng);
  EXPECT_EQ(mask_sizes(masks), (std::vector<std::size_t>{32, 32}));
}

TEST(AllocateMasks, LargestRemainderByHand) {
  RngStream rng(1, {0, Role::mixer, 0});
  const MixRatios r{{0.3, 0.7}, RatioSource::dirichlet_draw};
  const auto masks = allocate_masks(r, 10, rng);
  EXPECT_EQ(mask_sizes(masks), (std::vector<std::size_t>{3, 7}));
}

TEST(AllocateMasks, RemainderTieGoesToLowestClientIndex) {
  RngStream rng(1, {0, Role::mixer, 0});
  const MixRatios r{{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, RatioSource::dirichlet_draw};
  const auto masks = allocate_masks(r, 10, rng);
  EXPECT_EQ(mask_sizes(masks), (std::vector<std::size_t>{4, 3, 3}));
}

TEST(AllocateMasks, PartitionAndApportionmentPropertyOverRandomDraws) {
  RngStream rng(99, {0, Role::mixer, 0});
  for (int t = 0; t < 1000; ++t) {
    const std::size_t k = 1 + rng.uniform_below(6);
    const std::size_t n = k + rng.uniform_below(120);
    const double alpha = 0.3 + 4.0 * rng.uniform();
    const MixRatios r = sample_mix_ratios(k, alpha, rng);
    const auto masks = allocate_masks(r, n, rng);
    ASSERT_EQ(masks.size(), k);
    require_partition(masks);  // throws on violation
    std::size_t total = 0;
    for (std::size_t i = 0; i < k; ++i) {
      const double target = r.lambdas[i] * static_cast<double>(n);
      EXPECT_LT(std::abs(static_cast<double>(masks[i].count()) - target), 1.0);
      total += masks[i].count();
    }
    EXPECT_EQ(total, n);
  }
}

TEST(AllocateMasks, PatchAssignmentDependsOnStream) {
  RngStream a(1, {0, Role::mixer, 0});
  RngStream b(2, {0, Role::mixer, 0});
  const MixRatios r{{0.5, 0.5}, RatioSource::dirichlet_draw};
  const auto ma = allocate_masks(r, 64, a);
  const auto mb = allocate_masks(r, 64, b);
  EXPECT_NE(ma[0].selected, mb[0].selected);  // different permutations
}

TEST(AllocateMasks, RejectsFewerPatchesThanPositiveClients) {
  RngStream rng(1, {0, Role::mixer, 0});
  const MixRatios all_positive{{0.4, 0.3, 0.3}, RatioSource::dirichlet_draw};
  EXPECT_THROW(allocate_masks(all_positive, 2, rng), ParameterError);
  // A zero share makes the small patch budget legal again.
  const MixRatios with_zero{{0.6, 0.4, 0.0}, RatioSource::dirichlet_draw};
  const auto masks = allocate_masks(with_zero, 2, rng);
  EXPECT_EQ(masks[2].count(), 0u);
  require_partition(masks);
}

TEST(RealizedRatios, DirectFractions) {
  RngStream rng(1, {0, Role::mixer, 0});
  const auto masks64 = allocate_masks({{0.5, 0.5}, RatioSource::dirichlet_draw}, 64, rng);
  const MixRatios r64 = realized_ratios(masks64);
  EXPECT_EQ(r64.lambdas, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(r64.source, RatioSource::realized);

  const auto masks10 = allocate_masks({{0.3, 0.7}, RatioSource::dirichlet_draw}, 10, rng);
  EXPECT_EQ(realized_ratios(masks10).lambdas, (std::vector<double>{0.3, 0.7}));

  const auto thirds =
      allocate_masks({{1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}, RatioSource::dirichlet_draw}, 10, rng);
  const MixRatios rt = realized_ratios(thirds);
  EXPECT_EQ(rt.lambdas[0], 0.4);
  EXPECT_EQ(rt.lambdas[1], 0.3);
  // Exact unit sum by construction.
  EXPECT_EQ(rt.lambdas[0] + rt.lambdas[1] + rt.lambdas[2], 1.0);
}

TEST(RealizedRatios, RejectsNonPartition) {
  PatchMask a{{1, 1, 0, 0}};
  PatchMask overlap{{0, 1, 1, 1}};
  EXPECT_THROW(realized_ratios({a, overlap}), InvariantError);
  PatchMask gap{{0, 0, 1, 0}};
  EXPECT_THROW(realized_ratios({a, gap}), InvariantError);
}

TEST(AddGaussianNoise, ZeroVarianceIsBitwiseIdentity) {
  Matrix m(3, 4);
  RngStream seed_rng(11, {0, Role::client, 0});
  for (double& v : m.data) v = seed_rng.uniform();
  RngStream rng(1, {0, Role::client, 0});
  const Matrix out = add_gaussian_noise(m, 0.0, rng);
  EXPECT_EQ(out, m);
}

TEST(AddGaussianNoise, MomentEstimate) {
  Matrix zeros(1000, 1000, 0.0);
  RngStream rng(3, {0, Role::client, 0});
  const Matrix noised = add_gaussian_noise(zeros, 1.0, rng);
  double mean = 0.0;
  for (const double v : noised.data) mean += v;
  mean /= static_cast<double>(noised.size());
  double var = 0.0;
  for (const double v : noised.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(noised.size());
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(var, 1.0, 0.01);
}

TEST(AddGaussianNoise, SeededReplayIsIdentical) {
  Matrix zeros(8, 8, 0.0);
  RngStream a(17, {2, Role::client, 3});
  RngStream b(17, {2, Role::client, 3});
  EXPECT_EQ(add_gaussian_noise(zeros, 0.7, a), add_gaussian_noise(zeros, 0.7, b));
}

TEST(AddGaussianNoise, RejectsNegativeVariance) {
  Matrix m(1, 1, 0.0);
  RngStream rng(1, {0, Role::client, 0});
  EXPECT_THROW(add_gaussian_noise(m, -1e-9, rng), ParameterError);
}

TEST(SmashedData, FactoryValidatesBounds) {
  Matrix ok(2, 2, 0.5);
  EXPECT_NO_THROW(make_smashed(ok, 1.0));
  Matrix low(2, 2, -0.01);
  EXPECT_THROW(make_smashed(low, 1.0), InvariantError);
  Matrix high(2, 2, 1.01);
  EXPECT_THROW(make_smashed(high, 1.0), InvariantError);
  EXPECT_THROW(make_smashed(ok, 0.0), ParameterError);
  EXPECT_THROW(make_smashed(Matrix(0, 2), 1.0), ParameterError);
}

TEST(OneHotLabel, FactoryValidates) {
  const OneHotLabel y = one_hot(4, 2);
  EXPECT_EQ(y.values, (std::vector<double>{0, 0, 1, 0}));
  EXPECT_THROW(one_hot(3, 3), ParameterError);
  EXPECT_THROW(one_hot(0, 0), ParameterError);
}

}  // namespace
}  // namespace cutmixsl
