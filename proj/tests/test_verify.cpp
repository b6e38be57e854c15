#include <gtest/gtest.h>

#include "hardspot/verify.hpp"

using namespace hardspot;
using namespace hardspot::verify;

TEST(Binomial, TailValues) {
  EXPECT_DOUBLE_EQ(binomial_tail_ge(10, 0.5, 0), 1.0);
  EXPECT_EQ(binomial_tail_ge(10, 0.5, 11), 0.0);
  EXPECT_NEAR(binomial_tail_ge(10, 0.5, 10), std::pow(0.5, 10), 1e-15);
  EXPECT_NEAR(binomial_tail_ge(10, 0.5, 9), 11.0 / 1024.0, 1e-14);
  EXPECT_NEAR(binomial_tail_ge(3, 0.2, 1), 1.0 - 0.8 * 0.8 * 0.8, 1e-14);
}

TEST(Binomial, CriticalCount) {
  // P(X >= 9) = 11/1024 > 0.01, P(X >= 10) = 1/1024 <= 0.01.
  EXPECT_EQ(binomial_critical(10, 0.5, 0.01), 10u);
  const auto c = binomial_critical(10000, 0.01, 0.01);
  EXPECT_LE(binomial_tail_ge(10000, 0.01, c), 0.01);
  EXPECT_GT(binomial_tail_ge(10000, 0.01, c - 1), 0.01);
}

TEST(Drivers, SmallCoverageSweep) {
  auto r = bound_coverage(50);
  EXPECT_EQ(r.runs, 50u);
  EXPECT_LT(r.failures, r.critical);
  EXPECT_TRUE(r.pass);
}

TEST(Drivers, SmallGuaranteeSweeps) {
  auto g1 = verify_g1(20);
  EXPECT_EQ(g1.violations_on_event, 0u);
  auto g2 = verify_g2(20);
  EXPECT_EQ(g2.allocation_failures, 0u);
  EXPECT_GE(g2.contained, 19u);
}

TEST(Drivers, ThreeArmTrace) {
  auto t = three_arm_trace();
  EXPECT_EQ(t.frozen, "CCCCCBCBCB");
  EXPECT_EQ(t.expected, "CCCCCCCCCC");
  EXPECT_TRUE(t.contained);
}

TEST(Drivers, RunSeedsDiffer) {
  EXPECT_NE(run_seed(1, 0), run_seed(1, 1));
  EXPECT_NE(run_seed(1, 0), run_seed(2, 0));
  EXPECT_EQ(run_seed(3, 4), run_seed(3, 4));
}
