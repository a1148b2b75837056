#include <gtest/gtest.h>

#include <cmath>

#include "clusterlab/functionals.hpp"
#include "clusterlab/iid_oracle.hpp"

using namespace clusterlab;
using namespace clusterlab::iid;

TEST(IidOracle, PmfR2HalfByEnumeration) {
  // {00,10,01,11}: L=1 on 10 and 01, L=2 on 11, P(A) = 3/4.
  const auto f = closed_form_length_pmf(2, 0.5);
  EXPECT_NEAR(f[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(f[1], 1.0 / 3.0, 1e-15);
}

TEST(IidOracle, PmfR1) {
  EXPECT_NEAR(closed_form_length_pmf(1, 0.37)[0], 1.0, 1e-15);
}

TEST(IidOracle, PmfIsProper) {
  for (std::size_t r : {1u, 5u, 100u, 10000u})
    for (double w : {1e-6, 1e-3, 0.1, 0.5, 0.9}) {
      const auto f = closed_form_length_pmf(r, w);
      EXPECT_NEAR(compensated_sum(f), 1.0, 1e-12) << r << " " << w;
    }
}

TEST(IidOracle, EnumerationExamples) {
  const auto t1 = enumerate_patterns(2, 0.5, as_pattern(tmin()));
  EXPECT_NEAR(t1.expectation_on_a, 1.0, 1e-15);
  const auto len = enumerate_patterns(2, 0.5, as_pattern(length_pow(1.0)));
  EXPECT_NEAR(len.expectation_on_a, 1.0, 1e-15);
  for (std::size_t r : {1u, 4u, 9u})
    for (double w : {0.1, 0.7}) {
      const auto e = enumerate_patterns(r, w, as_pattern(ei()));
      EXPECT_NEAR(e.expectation_on_a, 1.0 - std::pow(1.0 - w, static_cast<double>(r)), 1e-14);
      EXPECT_NEAR(e.conditional, 1.0, 1e-14);
    }
}

TEST(IidOracle, EnumerationCap) {
  EXPECT_THROW(enumerate_patterns(25, 0.5, as_pattern(ei())), std::invalid_argument);
  EXPECT_THROW(as_pattern(sum_ind(2.0)), std::invalid_argument);
}

TEST(IidOracle, ClosedFormsMatchEnumerationOnGrid) {
  for (std::size_t r = 2; r <= 12; ++r)
    for (double w : {0.1, 0.3, 0.5}) {
      const auto f = closed_form_length_pmf(r, w);
      const auto g = enumerated_length_pmf(r, w);
      for (std::size_t i = 0; i < r; ++i) ASSERT_NEAR(f[i], g[i], 1e-12) << r << " " << w << " " << i;
      for (double gamma : {0.0, 1.0, 2.0})
        ASSERT_NEAR(length_moment(r, w, gamma), enumerate_patterns(r, w, as_pattern(length_pow(gamma))).expectation_on_a,
                    1e-12);
      ASSERT_NEAR(first_jump_moment(r, w, 1.0), enumerate_patterns(r, w, as_pattern(tmin())).expectation_on_a, 1e-12);
      ASSERT_NEAR(last_jump_moment(r, w, 2.0),
                  enumerate_patterns(r, w, as_pattern(tmax_pow_times(2.0, ei()))).expectation_on_a, 1e-12);
      auto st = [](double s, double t) { return s * t; };
      ASSERT_NEAR(joint_jump_moment(r, w, st), enumerate_patterns(r, w, joint_jump_pattern(st)).expectation_on_a, 1e-12);
    }
}

TEST(IidOracle, TimeReversalSymmetry) {
  for (std::size_t r : {3u, 7u, 12u})
    for (double w : {0.1, 0.5}) {
      const double rd = static_cast<double>(r);
      const auto a = enumerate_patterns(r, w, as_pattern(tmin()));
      const auto b = enumerate_patterns(r, w, [rd](const ExceedanceRecord& rec) {
        return rec.has_exceedance ? rd + 1.0 - static_cast<double>(rec.last()) : 0.0;
      });
      EXPECT_NEAR(a.expectation_on_a, b.expectation_on_a, 1e-13);
    }
}

TEST(IidOracle, DeterministicEnumeration) {
  const auto a = enumerate_patterns(14, 0.3, as_pattern(length_pow(1.5)));
  const auto b = enumerate_patterns(14, 0.3, as_pattern(length_pow(1.5)));
  EXPECT_EQ(a.expectation_on_a, b.expectation_on_a);
}

TEST(IidOracle, RateTableLargeBlockExampleAsStated) {
  // r = 1e4, w = 1e-3 gives r w = 10, outside the r w -> 0 regime in which the
  // large-block limit 1/6 holds; the exact value is far below it.
  const auto rows = moment_rate_table({10000}, WRule{1e-3, 0.0}, 1.0);
  EXPECT_NEAR(rows[1].value, 0.0080025, 1e-6);
}

TEST(IidOracle, RateTableLargeBlockWithSmallRw) {
  // r = 1e5, w = 1e-7: r^2 w = 1e3 (large blocks for gamma = 1) and r w = 1e-2.
  const auto rows = moment_rate_table({100000}, WRule{1e-7, 0.0}, 1.0);
  EXPECT_EQ(rows[1].statistic, kStatLengthLarge);
  EXPECT_LT(rows[1].rel_err, 0.01);
}

TEST(IidOracle, RateTableSmallBlockAndJumpRate) {
  const auto small = moment_rate_table({100}, WRule{1e-6, 0.0}, 1.0);
  EXPECT_EQ(small[0].statistic, kStatLengthSmall);
  EXPECT_LT(small[0].rel_err, 0.02);
  const auto jump = moment_rate_table({1000}, WRule{1e-5, 0.0}, 1.0);
  EXPECT_LT(jump[2].rel_err, 0.02);
}

TEST(IidOracle, BetaFunctionAsymptotics) {
  // sum_{i>=2} i^g f(i) ~ r^{g+1} w Beta(g+1, 2) when r w -> 0
  const std::size_t r = 20000;
  const double w = 1e-8;
  for (double g : {1.0, 2.0}) {
    const auto f = closed_form_length_pmf(r, w);
    double s = 0.0;
    for (std::size_t i = 2; i <= r; ++i) s += std::pow(static_cast<double>(i), g) * f[i - 1];
    const double beta = std::tgamma(g + 1.0) * std::tgamma(2.0) / std::tgamma(g + 3.0);
    EXPECT_NEAR(s / (std::pow(static_cast<double>(r), g + 1.0) * w * beta), 1.0, 0.01) << g;
  }
}

TEST(IidOracle, WRule) {
  const WRule rule{2.0, 1.5};
  EXPECT_NEAR(rule(100), 2.0e-3, 1e-15);
}
