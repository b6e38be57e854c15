#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "hardspot/bounds.hpp"
#include "hardspot/rng.hpp"

using namespace hardspot;

TEST(PerArmDelta, ReferenceValues) {
  EXPECT_EQ(per_arm_delta(0.01, 50, 1), 0.01 / (26.71 * 2500.0));
  EXPECT_DOUBLE_EQ(per_arm_delta(0.01, 50, 1), 1.497566454511419e-07);
  EXPECT_DOUBLE_EQ(per_arm_delta(0.01, 1, 1), 0.01 / 26.71);
}

TEST(PerArmDelta, DoublingSamplesQuarters) {
  for (std::uint64_t m = 1; m < 100000; m *= 2) {
    EXPECT_EQ(per_arm_delta(0.01, 50, 2 * m), per_arm_delta(0.01, 50, m) / 4.0);
  }
}

TEST(PerArmDelta, RejectsBadInput) {
  EXPECT_THROW(per_arm_delta(0.01, 50, 0), std::invalid_argument);
  EXPECT_THROW(per_arm_delta(1.5, 50, 1), std::invalid_argument);
  EXPECT_THROW(per_arm_delta(0.01, 0, 1), std::invalid_argument);
}

TEST(ComputeBounds, VacuousWithoutSamples) {
  auto b = compute_bounds({0, 0.0}, 0.01, 50);
  EXPECT_EQ(b.lcb, 0.0);
  EXPECT_EQ(b.ucb, 1.0);
}

TEST(ComputeBounds, TwoHundredSamples) {
  // Independently derived: delta_i = 3.743916136278547e-12, r = 0.2598270392858597.
  auto b = compute_bounds({200, 190.0}, 0.01, 50);
  EXPECT_DOUBLE_EQ(b.delta_i, 3.743916136278547e-12);
  EXPECT_NEAR(b.lcb, 0.6901729607141402, 1e-12);
  EXPECT_EQ(b.ucb, 1.0);
}

TEST(ComputeBounds, PerfectMeanClipsUcb) {
  for (std::uint64_t m : {1u, 10u, 1000u}) {
    EXPECT_EQ(compute_bounds({m, static_cast<double>(m)}, 0.01, 10).ucb, 1.0);
  }
}

TEST(RecordObservation, Examples) {
  EXPECT_EQ(record_observation({0, 0.0}, 1.0), (ArmStats{1, 1.0}));
  auto s = record_observation({3, 1.5}, 0.5);
  EXPECT_EQ(s, (ArmStats{4, 2.0}));
  EXPECT_EQ(*s.mean(), 0.5);
  EXPECT_THROW(record_observation({0, 0.0}, 1.2), std::out_of_range);
  EXPECT_THROW(record_observation({0, 0.0}, -0.1), std::out_of_range);
}

namespace {
struct Rec {
  ArmStats stats;
  Bounds bounds;
};
}  // namespace

TEST(DeferredRefresh, BelowFactorIsNoop) {
  std::vector<Rec> pool(149);
  for (auto& r : pool) {
    r.stats = {5, 2.0};
    r.bounds = compute_bounds(r.stats, 0.01, 100);
  }
  auto before = pool;
  EXPECT_EQ(deferred_refresh(pool, 100, 0.01), 100u);
  for (std::size_t i = 0; i < pool.size(); ++i) EXPECT_EQ(pool[i].bounds, before[i].bounds);
}

TEST(DeferredRefresh, AtFactorRecomputesArmsWithTwoSamples) {
  std::vector<Rec> pool(150);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    pool[i].stats = {i % 2 == 0 ? 1u : 5u, 0.5};
    pool[i].bounds = compute_bounds(pool[i].stats, 0.01, 100);
  }
  auto before = pool;
  EXPECT_EQ(deferred_refresh(pool, 100, 0.01), 150u);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i].stats.m < 2) {
      EXPECT_EQ(pool[i].bounds, before[i].bounds);
    } else {
      EXPECT_EQ(pool[i].bounds.pool_size_at_compute, 150u);
      EXPECT_EQ(pool[i].bounds, compute_bounds(pool[i].stats, 0.01, 150));
    }
  }
}

TEST(Properties, RadiusShrinksWithSamplesAtFixedPool) {
  for (std::size_t n : {1u, 50u, 1000u}) {
    for (std::uint64_t m = 2; m < 20000; ++m) {
      ASSERT_LE(hoeffding_radius(per_arm_delta(0.01, n, m + 1), m + 1),
                hoeffding_radius(per_arm_delta(0.01, n, m), m));
    }
  }
}

TEST(Properties, PessimisticUpdateNeverRaisesUcb) {
  Rng rng(5);
  for (int trial = 0; trial < 10000; ++trial) {
    const std::uint64_t m = 1 + uniform_index(rng, 500);
    const double mean = uniform01(rng);
    ArmStats s{m, mean * static_cast<double>(m)};
    const double y = mean * uniform01(rng);
    const auto before = compute_bounds(s, 0.01, 50);
    const auto after = compute_bounds(record_observation(s, y), 0.01, 50);
    ASSERT_LE(after.ucb, before.ucb + 1e-15);
  }
}

TEST(Properties, CoverageOfSingleArm) {
  // Each arm's true mean stays inside its interval at every checkpoint.
  Rng rng(6);
  int exits = 0;
  const int runs = 2000;
  for (int r = 0; r < runs; ++r) {
    const double mu = uniform01(rng);
    ArmStats s;
    bool out = false;
    for (int k = 0; k < 200; ++k) {
      s = record_observation(s, bernoulli(rng, mu) ? 1.0 : 0.0);
      auto b = compute_bounds(s, 0.01, 20);
      out = out || mu < b.lcb || mu > b.ucb;
    }
    exits += out ? 1 : 0;
  }
  EXPECT_LE(exits, 5);
}
