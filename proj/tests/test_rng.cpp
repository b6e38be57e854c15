#include <set>

#include <gtest/gtest.h>

#include "hardspot/rng.hpp"

using namespace hardspot;

TEST(Rng, Mix64IsDeterministicAndSpreads) {
  EXPECT_EQ(mix64(1, 2), mix64(1, 2));
  EXPECT_NE(mix64(1, 2), mix64(2, 1));
  std::set<std::uint64_t> seen;
  for (std::uint64_t k = 0; k < 1000; ++k) seen.insert(mix64(7, k));
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(Rng, ToUnitStaysInHalfOpenInterval) {
  EXPECT_EQ(to_unit(0), 0.0);
  EXPECT_LT(to_unit(~0ULL), 1.0);
}

TEST(Rng, StateRoundTripsThroughText) {
  Rng a(42);
  for (int k = 0; k < 17; ++k) a();
  Rng b = rng_from_string(rng_to_string(a));
  for (int k = 0; k < 100; ++k) ASSERT_EQ(a(), b());
}

TEST(Rng, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
}

TEST(Rng, UniformIndexCoversRange) {
  Rng rng(3);
  std::set<std::uint64_t> seen;
  for (int k = 0; k < 200; ++k) {
    auto v = uniform_index(rng, 5);
    ASSERT_LT(v, 5u);
    seen.insert(v);
  }
  EXPECT_EQ(seen.size(), 5u);
}
