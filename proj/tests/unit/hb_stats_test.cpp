#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "mp_reference.hpp"
#include "prosac/hb_stats.hpp"
#include "prosac/seed.hpp"

namespace {

using namespace prosac;

// Evaluated at 40 digits with mpmath from the two-term formula.
constexpr double kH1_005_01 = 0.01670650117876471394;
constexpr double kH1_0_01 = 0.10536051565782630123;
// Exact rational sum of the Bin(100, 0.1) pmf for k = 0..10, rounded.
constexpr double kBinomTail_10_100 = 0.58315551226649180318;
constexpr double kPow09_100 = 2.6561398887587476934e-5;
constexpr double kPow09_1000 = 1.7478712517226516097e-46;

double rel_err(double got, double want) { return std::abs(got - want) / std::abs(want); }

TEST(H1, IdenticalBernoullisHaveZeroDivergence) { EXPECT_DOUBLE_EQ(h1(0.1, 0.1), 0.0); }

TEST(H1, ZeroRiskUsesAnalyticLimit) {
  EXPECT_LT(rel_err(h1(0.0, 0.1), kH1_0_01), 1e-15);
  EXPECT_LT(rel_err(h1(0.0, 0.1), std::log(1.0 / 0.9)), 1e-15);
}

TEST(H1, RegressionValue) { EXPECT_LT(rel_err(h1(0.05, 0.1), kH1_005_01), 1e-14); }

TEST(H1, NonNegativeBelowB) {
  for (double b : {0.01, 0.1, 0.5, 0.9}) {
    for (int i = 0; i <= 100; ++i) {
      const double a = b * i / 100.0;
      if (a >= 1.0) continue;
      EXPECT_GE(h1(a, b), 0.0) << a << " " << b;
    }
  }
}

TEST(H1, DomainErrors) {
  EXPECT_THROW(h1(0.1, 0.0), std::domain_error);
  EXPECT_THROW(h1(0.1, 1.0), std::domain_error);
  EXPECT_THROW(h1(1.0, 0.5), std::domain_error);
  EXPECT_THROW(h1(-0.1, 0.5), std::domain_error);
  EXPECT_THROW(h1(0.1, std::nan("")), std::domain_error);
}

TEST(BinomTail, FullSupportIsOne) {
  for (std::int64_t n : {1, 7, 100, 100000}) EXPECT_EQ(binom_tail(n, n, 0.3), 1.0);
}

TEST(BinomTail, ZeroSuccessesClosedForm) {
  EXPECT_LT(rel_err(binom_tail(0, 100, 0.1), kPow09_100), 1e-13);
  EXPECT_LT(rel_err(binom_tail(0, 1000, 0.1), kPow09_1000), 1e-12);
}

TEST(BinomTail, RegressionValueFromExactSum) {
  EXPECT_LT(rel_err(binom_tail(10, 100, 0.1), kBinomTail_10_100), 1e-13);
  const double exact = mpref::binom_cdf_exact(10, 100, 0.1).convert_to<double>();
  EXPECT_LT(rel_err(kBinomTail_10_100, exact), 1e-15);
}

TEST(BinomTail, MatchesExactRationalSmallN) {
  for (std::int64_t n : {1, 2, 5, 10, 37, 100}) {
    for (double alpha : {0.01, 0.1, 0.25, 0.5, 0.9}) {
      for (std::int64_t k = 0; k <= n; ++k) {
        const double exact = mpref::binom_cdf_exact(k, n, alpha).convert_to<double>();
        EXPECT_LT(rel_err(binom_tail(k, n, alpha), exact), 1e-12) << "k=" << k << " n=" << n << " a=" << alpha;
      }
    }
  }
}

TEST(BinomTail, NondecreasingInK) {
  for (std::int64_t n : {10, 200, 5000}) {
    double prev = 0.0;
    for (std::int64_t k = 0; k <= n; ++k) {
      const double v = binom_tail(k, n, 0.1);
      EXPECT_GE(v, prev) << k;
      prev = v;
    }
  }
}

TEST(BinomTail, DomainErrors) {
  EXPECT_THROW(binom_tail(-1, 10, 0.1), std::domain_error);
  EXPECT_THROW(binom_tail(11, 10, 0.1), std::domain_error);
  EXPECT_THROW(binom_tail(1, 0, 0.1), std::domain_error);
  EXPECT_THROW(binom_tail(1, 10, 1.0), std::domain_error);
}

TEST(HbPValue, ZeroRiskReducesToClosedForm) {
  const PValue p = hb_p_value(0.0, 100, 0.1);
  EXPECT_LT(rel_err(p.value, kPow09_100), 1e-13);
  EXPECT_LT(rel_err(p.hoeffding, kPow09_100), 1e-13);
  EXPECT_LT(rel_err(p.bentkus, std::exp(1.0) * kPow09_100), 1e-13);
}

TEST(HbPValue, HighRiskGivesOne) {
  const PValue p = hb_p_value(0.5, 100, 0.1);
  EXPECT_EQ(p.value, 1.0);
  EXPECT_EQ(p.hoeffding, 1.0);
  EXPECT_GT(p.bentkus, 1.0);
}

TEST(HbPValue, OrderedInRisk) {
  EXPECT_LT(hb_p_value(0.05, 1000, 0.1).value, hb_p_value(0.08, 1000, 0.1).value);
}

TEST(HbPValue, FrozenValuesAtN1000) {
  // log p evaluated at 100 digits from the formula; see mp_reference.hpp.
  const std::vector<std::pair<int, double>> cases = {
      {76, 0.0143}, {78, 0.0268}, {80, 0.0479}, {84, 0.1318}, {88, 0.3026}, {90, 0.4301}};
  for (const auto& [k, approx] : cases) {
    const double ref = std::exp(mpref::log_hb_p_value(k, 1000, 0.1).convert_to<double>());
    const double got = hb_p_value(k / 1000.0, 1000, 0.1).value;
    EXPECT_LT(rel_err(got, ref), 1e-10) << k;
    EXPECT_NEAR(got, approx, 5e-5) << k;
  }
}

TEST(HbPValue, MatchesReferenceAcrossRegimes) {
  for (std::int64_t n : {10, 100, 1000, 100000}) {
    for (int i = 0; i < 40; ++i) {
      const auto k = static_cast<std::int64_t>(to_unit_interval(derive_seed(7, "k", i * 100003 + n)) *
                                               static_cast<double>(n + 1)) % (n + 1);
      const double alpha = 0.001 + 0.998 * to_unit_interval(derive_seed(7, "alpha", i * 100003 + n));
      const double ref = mpref::log_hb_p_value(k, n, alpha).convert_to<double>();
      const PValue p = hb_p_value(static_cast<double>(k) / static_cast<double>(n), n, alpha);
      EXPECT_LE(std::abs(p.log_value - ref), 1e-10 * std::max(1.0, std::abs(ref))) << k << "/" << n << " " << alpha;
    }
  }
}

TEST(HbPValue, UnderflowClampsToFloorAndKeepsLog) {
  const PValue p = hb_p_value(0.0, 100000, 0.1);
  EXPECT_EQ(p.value, kPValueFloor);
  EXPECT_GT(p.value, 0.0);
  EXPECT_LT(rel_err(p.log_value, 100000 * std::log(0.9)), 1e-12);
}

TEST(HbPValue, CeilingSnapsRepresentationNoise) {
  // 0.07 * 1000 is 70.00000000000001 in binary; the count is 70, not 71.
  EXPECT_EQ(lattice_ceil(0.07, 1000), 70);
  EXPECT_EQ(hb_p_value(0.07, 1000, 0.1).value, hb_p_value(70.0 / 1000.0, 1000, 0.1).value);
  EXPECT_EQ(lattice_ceil(0.0705, 1000), 71);
}

TEST(HbPValue, ValueInUnitInterval) {
  for (int k = 0; k <= 200; ++k) {
    for (double alpha : {1e-6, 0.05, 0.5, 0.999}) {
      const double v = hb_p_value(k / 200.0, 200, alpha).value;
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(HbPValue, BentkusTermNondecreasingInRisk) {
  double prev = 0.0;
  for (int k = 0; k <= 500; ++k) {
    const double b = hb_p_value(k / 500.0, 500, 0.2).bentkus;
    EXPECT_GE(b, prev);
    prev = b;
  }
}

TEST(HbPValue, DomainErrors) {
  EXPECT_THROW(hb_p_value(0.1, 100, 0.0), std::domain_error);
  EXPECT_THROW(hb_p_value(0.1, 100, 1.0), std::domain_error);
  EXPECT_THROW(hb_p_value(1.5, 100, 0.1), std::domain_error);
  EXPECT_THROW(hb_p_value(0.1, 0, 0.1), std::domain_error);
}

TEST(EmpiricalRisk, CountsOnlyCorrectAndFooled) {
  const std::vector<std::uint8_t> ones(8, 1);
  const std::vector<std::uint8_t> zeros(8, 0);
  EXPECT_EQ(empirical_risk(ones, zeros).risk_hat, 0.0);
  EXPECT_EQ(empirical_risk(zeros, ones).risk_hat, 0.0);
  const std::vector<std::uint8_t> correct = {1, 1, 0, 1};
  const std::vector<std::uint8_t> fooled = {1, 0, 1, 1};
  const RiskEstimate r = empirical_risk(correct, fooled, {0.5, 2.0});
  EXPECT_EQ(r.risk_hat, 0.5);
  EXPECT_EQ(r.n, 4);
  ASSERT_TRUE(r.per_sample);
  EXPECT_EQ(r.per_sample->size(), 4u);
  EXPECT_EQ(r.lambda, (std::vector<double>{0.5, 2.0}));
}

TEST(EmpiricalRisk, AlwaysOnLattice) {
  for (int n = 1; n <= 60; ++n) {
    std::vector<std::uint8_t> c(n), f(n);
    for (int i = 0; i < n; ++i) {
      c[i] = (derive_seed(n, "c", i) & 1) != 0;
      f[i] = (derive_seed(n, "f", i) & 1) != 0;
    }
    const RiskEstimate r = empirical_risk(c, f);
    EXPECT_TRUE(on_risk_lattice(r.risk_hat, r.n));
  }
}

TEST(EmpiricalRisk, Errors) {
  const std::vector<std::uint8_t> a = {1, 0};
  const std::vector<std::uint8_t> b = {1};
  EXPECT_THROW(empirical_risk(a, b), std::invalid_argument);
  EXPECT_THROW(empirical_risk(std::span<const std::uint8_t>{}, std::span<const std::uint8_t>{}),
               std::invalid_argument);
}

}  // namespace
