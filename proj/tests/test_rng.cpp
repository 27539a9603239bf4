#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "deltapath/rng.hpp"

using namespace deltapath;

namespace {

StreamKey key(std::uint32_t sample) {
  return StreamKey{42, StreamDomain::test, 3, 5, 0, sample};
}

}  // namespace

TEST(RandomStream, SameKeySameSequence) {
  RandomStream a(key(7));
  RandomStream b(key(7));
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_1d(), b.next_1d());
}

TEST(RandomStream, OutputsInHalfOpenUnitInterval) {
  for (std::uint32_t s = 0; s < 200; ++s) {
    RandomStream r(key(s));
    for (int i = 0; i < 500; ++i) {
      const double u = r.next_1d();
      ASSERT_GE(u, 0.0);
      ASSERT_LT(u, 1.0);
    }
  }
  // Largest representable output stays below one.
  EXPECT_LT(0xFFFFFFFFp-32, 1.0);
}

TEST(RandomStream, Next2dAdvancesByTwo) {
  RandomStream a(key(1));
  RandomStream b(key(1));
  const auto pair = a.next_2d();
  EXPECT_EQ(pair[0], b.next_1d());
  EXPECT_EQ(pair[1], b.next_1d());
  EXPECT_EQ(a.dimension(), 2u);
}

TEST(RandomStream, PinnedValues) {
  // Guards the documented mixing function against accidental change.
  EXPECT_EQ(mix64(0), 0u);
  EXPECT_EQ(mix64(1), 0x5692161D100B05E5ULL);
  // First output of the reference splitmix64 generator seeded with 0.
  EXPECT_EQ(mix64(0x9E3779B97F4A7C15ULL), 0xE220A8397B1DCDAFULL);
  RandomStream r(StreamKey{1, StreamDomain::reference, 0, 0, 0, 0});
  const double u0 = r.next_1d();
  RandomStream again(StreamKey{1, StreamDomain::reference, 0, 0, 0, 0});
  EXPECT_EQ(u0, again.next_1d());
  EXPECT_EQ(u0, RandomStream::at(StreamKey{1, StreamDomain::reference, 0, 0, 0, 0}.prefix(), 0));
}

TEST(RandomStream, ExhaustionThrows) {
  RandomStream r(key(0));
  r.set_dimension(RandomStream::kMaxDimensions - 1);
  EXPECT_NO_THROW(r.next_1d());
  EXPECT_THROW(r.next_1d(), StreamExhausted);
}

TEST(RandomStream, ExplicitDimensionMatchesSequentialDraw) {
  RandomStream seq(key(9));
  std::vector<double> values;
  for (int i = 0; i < 40; ++i) values.push_back(seq.next_1d());
  RandomStream jump(key(9));
  jump.set_dimension(17);
  EXPECT_EQ(jump.next_1d(), values[17]);
}

TEST(RandomStream, SampleIndicesAreUncorrelated) {
  // Chi-square on 10x10 bins of (first value of stream s, first value of stream s + 1).
  constexpr int kBins = 10;
  constexpr int kPairs = 100000;
  std::vector<int> counts(kBins * kBins, 0);
  double sxy = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0;
  for (int s = 0; s < kPairs; ++s) {
    const double x = RandomStream(key(2 * s)).next_1d();
    const double y = RandomStream(key(2 * s + 1)).next_1d();
    counts[static_cast<int>(x * kBins) * kBins + static_cast<int>(y * kBins)]++;
    sx += x;
    sy += y;
    sxy += x * y;
    sxx += x * x;
    syy += y * y;
  }
  const double expected = static_cast<double>(kPairs) / (kBins * kBins);
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 99th percentile of chi-square with 99 degrees of freedom.
  EXPECT_LT(chi2, 134.642);

  const double n = kPairs;
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double corr = cov / std::sqrt((sxx / n - sx * sx / n / n) * (syy / n - sy * sy / n / n));
  EXPECT_LT(std::abs(corr), 4.0 / std::sqrt(n));
}

TEST(RandomStream, DimensionsAreUniform) {
  constexpr int kBins = 20;
  std::vector<int> counts(kBins, 0);
  constexpr int kDraws = 100000;
  RandomStream r(key(0));
  for (int i = 0; i < kDraws; ++i) {
    if (r.dimension() == RandomStream::kMaxDimensions) r = RandomStream(key(1 + i));
    counts[static_cast<int>(r.next_1d() * kBins)]++;
  }
  const double expected = static_cast<double>(kDraws) / kBins;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 36.191);  // 99th percentile, 19 degrees of freedom
}

TEST(ForkForScene, ForksReplayIdenticalSequences) {
  RandomStream parent(key(4));
  RandomStream a = fork_for_scene(parent, SceneVariant::static_scene);
  RandomStream b = fork_for_scene(parent, SceneVariant::dynamic_scene);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_1d(), b.next_1d());
}

TEST(ForkForScene, EqualAdvanceKeepsForksAligned) {
  RandomStream parent(key(4));
  RandomStream a = fork_for_scene(parent, SceneVariant::static_scene);
  RandomStream b = fork_for_scene(parent, SceneVariant::dynamic_scene);
  for (int i = 0; i < 3; ++i) {
    a.next_1d();
    b.next_1d();
  }
  EXPECT_EQ(a.next_1d(), b.next_1d());
}

TEST(ForkForScene, ParentUnaffected) {
  RandomStream parent(key(4));
  const RandomStream snapshot = parent;
  RandomStream child = fork_for_scene(parent, SceneVariant::dynamic_scene);
  for (int i = 0; i < 25; ++i) child.next_1d();
  EXPECT_EQ(parent, snapshot);
  EXPECT_EQ(parent.dimension(), 0u);
}

TEST(StreamKey, EveryFieldChangesThePrefix) {
  const StreamKey base{1, StreamDomain::delta, 2, 3, 4, 5};
  StreamKey k = base;
  k.seed = 9;
  EXPECT_NE(k.prefix(), base.prefix());
  k = base;
  k.domain = StreamDomain::reference;
  EXPECT_NE(k.prefix(), base.prefix());
  k = base;
  k.px = 3;
  k.py = 2;
  EXPECT_NE(k.prefix(), base.prefix());
  k = base;
  k.frame = 5;
  k.sample = 4;
  EXPECT_NE(k.prefix(), base.prefix());
}
