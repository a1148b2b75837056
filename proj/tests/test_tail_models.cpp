#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "clusterlab/functionals.hpp"
#include "clusterlab/generators.hpp"
#include "clusterlab/stats.hpp"
#include "clusterlab/tail_models.hpp"

using namespace clusterlab;

namespace {

const GeneratorModel kMM1 = GeneratorModel::moving_max({1.0, 1.0});
const GeneratorModel kAR = GeneratorModel::ar1(0.5);

double pareto_cdf(double x, double alpha) { return x <= 1.0 ? 0.0 : 1.0 - std::pow(x, -alpha); }

} // namespace

TEST(TailPath, IidHasSingleNonzeroCoordinate) {
  const TailProcessModel m(GeneratorModel::iid(2.0));
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const auto p = sample_tail_path(m, 1, i);
    ASSERT_EQ(p.values.size(), 1u);
    ASSERT_GT(p.y0(), 1.0);
    ASSERT_EQ(p.at(1), 0.0);
    ASSERT_EQ(p.at(-1), 0.0);
  }
}

TEST(TailPath, MovingMaxSpectralPatterns) {
  const TailProcessModel m(kMM1);
  std::size_t two_forward = 0;
  for (std::uint64_t i = 0; i < 20000; ++i) {
    const auto p = sample_tail_path(m, 2, i);
    ASSERT_EQ(p.values.size(), 2u);
    // lag 0: (Y0, Y0) forward; lag 1: (Y0, Y0) backward
    ASSERT_EQ(p.values[0], p.values[1]);
    two_forward += p.center == 0;
  }
  EXPECT_NEAR(two_forward / 20000.0, 0.5, 4.0 * binomial_se(0.5, 20000));
  // weights with a zero coordinate give a single nonzero value on the other lags
  const TailProcessModel z(GeneratorModel::moving_max({1.0, 0.0, 2.0}));
  for (std::uint64_t i = 0; i < 200; ++i) {
    const auto p = sample_tail_path(z, 3, i);
    ASSERT_NE(p.center, 1u);
    ASSERT_EQ(p.values[1], 0.0);
  }
}

TEST(TailPath, Ar1ForwardRatioIsPhi) {
  const TailProcessModel m(kAR);
  for (std::uint64_t i = 0; i < 500; ++i) {
    const auto p = sample_tail_path(m, 4, i);
    for (long j = 0; j < 20; ++j) ASSERT_DOUBLE_EQ(p.at(j + 1) / p.at(j), 0.5);
    for (long j = p.lo(); j < 0; ++j) ASSERT_DOUBLE_EQ(p.at(j) / p.at(j + 1), 2.0);
    ASSERT_EQ(p.at(p.lo() - 1), 0.0);
  }
  EXPECT_EQ(m.horizon(), 1024u);
}

TEST(TailPath, Deterministic) {
  const TailProcessModel m(kAR);
  EXPECT_EQ(sample_tail_path(m, 9, 3).values, sample_tail_path(m, 9, 3).values);
  EXPECT_NE(sample_tail_path(m, 9, 3).values, sample_tail_path(m, 9, 4).values);
}

TEST(TailPath, AbsY0IsPareto) {
  for (const auto& g : {GeneratorModel::iid(1.0), kMM1, GeneratorModel::ar1(0.5, 2.0)}) {
    const TailProcessModel m(g);
    std::vector<double> y0(200000);
    for (std::size_t i = 0; i < y0.size(); ++i) y0[i] = std::abs(sample_tail_path(m, 5, i).y0());
    EXPECT_LT(ks_distance(y0, [&](double x) { return pareto_cdf(x, g.alpha); }), 0.01) << g.label();
  }
}

TEST(TailPath, MatchesConditionalLawOracle) {
  // P(|Y_j| > 1), j in [-3, 3], against the generator conditioned on X_0 > u.
  for (const auto& g : {kMM1, kAR, GeneratorModel::moving_max({0.5, 1.0, 0.7})}) {
    const TailProcessModel m(g);
    const double u = level_for_w(g, 2e-4);
    const auto law = empirical_tail_path_oracle(g, u, 3, 20000000, 6);
    ASSERT_GT(law.count(), 2000u);
    std::vector<std::vector<double>> ind(7, std::vector<double>(200000));
    for (std::size_t i = 0; i < 200000; ++i) {
      const auto p = sample_tail_path(m, 7, i);
      for (long j = -3; j <= 3; ++j) ind[j + 3][i] = std::abs(p.at(j)) > 1.0;
    }
    for (long j = -3; j <= 3; ++j) {
      const auto a = mc_estimate(ind[j + 3]);
      const auto b = law.exceed_prob(j);
      EXPECT_NEAR(a.value, b.value, 4.0 * std::hypot(a.std_error, b.std_error) + 1e-12) << g.label() << " j=" << j;
    }
  }
}

TEST(TailPath, MovingMaxNeighbourProbabilityHalf) {
  const auto law = empirical_tail_path_oracle(kMM1, level_for_w(kMM1, 1e-4), 1, 20000000, 8);
  const auto p = law.exceed_prob(1);
  EXPECT_NEAR(p.value, 0.5, 3.0 * p.std_error + 1e-3);
}

TEST(TailPath, Ar1ConditionalRatioOracle) {
  const auto law = empirical_tail_path_oracle(kAR, level_for_w(kAR, 1e-4), 1, 20000000, 10);
  // X_1 / X_0 = phi + Z_1 / X_0 has no mean at alpha = 1; compare medians
  std::vector<double> ratio(law.count());
  for (std::size_t i = 0; i < ratio.size(); ++i) ratio[i] = law.at(i, 1) / law.at(i, 0);
  std::nth_element(ratio.begin(), ratio.begin() + ratio.size() / 2, ratio.end());
  EXPECT_NEAR(ratio[ratio.size() / 2], 0.5, 0.01);
}

TEST(TailPath, OracleWithoutExceedancesThrows) {
  EXPECT_THROW(empirical_tail_path_oracle(GeneratorModel::iid(), 1e300, 1, 1000, 1), std::runtime_error);
}

TEST(CandidateTheta, KnownValues) {
  const auto iid = candidate_theta(TailProcessModel(GeneratorModel::iid()), 10000, 1);
  EXPECT_TRUE(iid.exact);
  EXPECT_EQ(iid.value.value, 1.0);
  EXPECT_EQ(iid.mc.value, 1.0);
  for (const auto& g : {kMM1, kAR}) {
    const auto t = candidate_theta(TailProcessModel(g), 200000, 2);
    EXPECT_EQ(t.value.value, 0.5);
    EXPECT_EQ(t.value.std_error, 0.0);
    EXPECT_NEAR(t.mc.value, 0.5, 3.0 * t.mc.std_error) << g.label();
  }
  // a^alpha weighting
  const TailProcessModel w(GeneratorModel::moving_max({1.0, 2.0, 1.0}, 2.0));
  EXPECT_NEAR(*w.theta_exact(), 4.0 / 6.0, 1e-15);
}

TEST(CandidateTheta, WorkerCountDoesNotChangeResult) {
  const TailProcessModel m(kAR);
  const auto a = candidate_theta(m, 30000, 3, 1);
  const auto b = candidate_theta(m, 30000, 3, 4);
  EXPECT_EQ(a.mc.value, b.mc.value);
}

TEST(ClusterIndex, EiEqualsTheta) {
  for (const auto& g : {kMM1, kAR, GeneratorModel::moving_max({0.2, 1.0, 0.9}, 1.5)}) {
    const TailProcessModel m(g);
    const auto e = cluster_index(m, ei(), 200000, 4);
    EXPECT_NEAR(e.value, *m.theta_exact(), 3.0 * e.std_error) << g.label();
    EXPECT_GE(e.std_error, 0.0);
  }
}

TEST(ClusterIndex, IidValues) {
  const TailProcessModel m(GeneratorModel::iid(1.0));
  for (double g : {0.0, 1.0, 2.5}) EXPECT_EQ(cluster_index(m, length_pow(g), 1000, 5).value, 1.0);
  for (double q : {1.0, 3.0}) EXPECT_EQ(cluster_index(m, length_gt(q), 1000, 5).value, 0.0);
}

TEST(ClusterIndex, MovingMaxLengthIsTwo) {
  // anchored MM(1) equal-weight paths are (Y0, Y0) with Y0 > 1: L = 2
  const TailProcessModel m(kMM1);
  const auto e = cluster_index(m, length_pow(1.0), 100000, 6);
  const auto t = cluster_index(m, ei(), 100000, 6);
  EXPECT_DOUBLE_EQ(e.value, 2.0 * t.value);
  EXPECT_GT(t.value, 0.4);
}

TEST(ClusterIndex, RejectsNonVanishingFunctional) {
  ClusterFunctional h = ei();
  h.vanishes_around_zero = false;
  EXPECT_THROW(cluster_index(TailProcessModel(kMM1), h, 10, 1), std::invalid_argument);
}

TEST(Z, IidAcceptsEveryPath) {
  const TailProcessModel m(GeneratorModel::iid());
  const auto z = z_expectation(m, ei(), 1000, 1);
  EXPECT_EQ(z.acceptance_rate, 1.0);
  EXPECT_EQ(z.value.value, 1.0);
}

TEST(Z, AcceptanceRateIsTheta) {
  for (const auto& g : {kMM1, kAR}) {
    const auto z = z_expectation(TailProcessModel(g), ei(), 50000, 2);
    const double n = static_cast<double>(z.trials);
    EXPECT_NEAR(z.acceptance_rate, 0.5, 3.0 * binomial_se(0.5, n)) << g.label();
  }
}

TEST(Z, PalmIdentity) {
  // theta E[1{L(Z) > q}] = nu*(1{L > q})
  for (const auto& g : {kAR, GeneratorModel::moving_max({0.6, 1.0, 0.8})}) {
    const TailProcessModel m(g);
    const double theta = *m.theta_exact();
    for (double q : {1.0, 2.0}) {
      const auto z = z_expectation(m, length_gt(q), 100000, 3);
      const auto nu = cluster_index(m, length_gt(q), 200000, 4);
      EXPECT_NEAR(theta * z.value.value, nu.value, 3.0 * std::hypot(theta * z.value.std_error, nu.std_error))
          << g.label() << " q=" << q;
    }
  }
}

TEST(Z, RejectionBudgetReported) {
  const TailProcessModel m(kAR);
  bool thrown = false;
  for (std::uint64_t i = 0; i < 200 && !thrown; ++i) {
    try {
      sample_Z(m, 5, i, 1);
    } catch (const std::runtime_error& e) {
      thrown = true;
      EXPECT_NE(std::string(e.what()).find("acceptance rate"), std::string::npos);
    }
  }
  EXPECT_TRUE(thrown);
}

TEST(ClusterLengthPmf, ProperDistribution) {
  for (const auto& g : {kMM1, kAR, GeneratorModel::moving_max({1.0, 0.5, 0.25})}) {
    const auto f = limiting_cluster_length_pmf(TailProcessModel(g), 50, 200000, 6);
    EXPECT_NEAR(f.total.value, 1.0, 3.0 * f.total.std_error + 1e-12) << g.label();
    double partial = 0.0;
    for (const auto& e : f.f) partial += e.value;
    EXPECT_LE(partial, f.total.value + 1e-12);
  }
}

TEST(ClusterLengthPmf, KnownShapes) {
  const auto iid = limiting_cluster_length_pmf(TailProcessModel(GeneratorModel::iid()), 5, 1000, 1);
  EXPECT_EQ(iid.f[0].value, 1.0);
  EXPECT_EQ(iid.f[1].value, 0.0);
  // MM(1) equal weights: every anchored path has length 2; f(2) = P(lag 0) / theta
  const auto mm = limiting_cluster_length_pmf(TailProcessModel(kMM1), 5, 100000, 2);
  EXPECT_EQ(mm.f[0].value, 0.0);
  EXPECT_NEAR(mm.f[1].value, 1.0, 3.0 * mm.f[1].std_error);
  // AR(1): anchored paths have Y_j = Y0 phi^j, so L = 1 + floor(log Y0 / log(1/phi)) with
  // P(L > q) = P(Y0 > phi^{-q}) = phi^{q alpha}: f(q) = phi^{(q-1)} (1 - phi) for alpha = 1
  const auto ar = limiting_cluster_length_pmf(TailProcessModel(kAR), 6, 400000, 3);
  for (std::size_t q = 1; q <= 6; ++q) {
    const double exact = std::pow(0.5, static_cast<double>(q - 1)) * 0.5;
    EXPECT_NEAR(ar.f[q - 1].value, exact, 4.0 * ar.f[q - 1].std_error) << q;
  }
}
