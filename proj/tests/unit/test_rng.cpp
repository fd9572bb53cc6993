#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "photoion/rng.hpp"

using namespace photoion;

TEST(Rng, EngineMatchesStandardSequence) {
  // std::mt19937_64 with the default seed: the 10000th output is fixed.
  Rng r(5489u);
  std::uint64_t v = 0;
  for (int i = 0; i < 10000; ++i) v = r.next_u64();
  EXPECT_EQ(v, 9981545732273789042ULL);
}

TEST(Rng, SameSeedSameStream) {
  Rng a(77), b(77);
  for (int i = 0; i < 1000; ++i) {
    ASSERT_EQ(a.uniform(), b.uniform());
    ASSERT_EQ(a.normal(), b.normal());
  }
}

TEST(Rng, UniformIsOpenInterval) {
  Rng r(1);
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
  }
}

TEST(Rng, MomentsOfVariates) {
  Rng r(2024);
  const int n = 200000;
  double se = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    se += r.exponential(4.0);
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  EXPECT_NEAR(se / n, 0.25, 5 * 0.25 / std::sqrt(n));
  EXPECT_NEAR(sn / n, 0.0, 5 / std::sqrt(n));
  EXPECT_NEAR(sn2 / n, 1.0, 5 * std::sqrt(2.0 / n));
}

TEST(DeriveSeed, DeterministicAndPathSensitive) {
  EXPECT_EQ(derive_seed(12345, {1, 2, 3}), derive_seed(12345, {1, 2, 3}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 20; ++a)
    for (std::uint64_t b = 0; b < 20; ++b) seen.insert(derive_seed(12345, {a, b}));
  EXPECT_EQ(seen.size(), 400u);
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {}), derive_seed(2, {}));
  EXPECT_NE(derive_seed(1, {0}), derive_seed(1, {0, 0}));
}

TEST(DeriveSeed, SiblingStreamsUncorrelated) {
  Rng a(derive_seed(9, {4, 0})), b(derive_seed(9, {4, 1}));
  const int n = 100000;
  double s = 0;
  for (int i = 0; i < n; ++i) s += (a.uniform() - 0.5) * (b.uniform() - 0.5);
  const double corr = s / n * 12.0;
  EXPECT_LT(std::abs(corr), 5.0 / std::sqrt(n));
}
