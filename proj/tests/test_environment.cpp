#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "deltapath/environment.hpp"
#include "deltapath/rng.hpp"

using namespace deltapath;

namespace {

EnvironmentMap row_map(std::vector<Rgb> texels) {
  const int w = static_cast<int>(texels.size());
  return {w, 1, std::move(texels)};
}

}  // namespace

TEST(EnvironmentMap, SolidAnglesCoverTheSphere) {
  for (auto [w, h] : {std::pair{1, 1}, {2, 1}, {8, 4}, {16, 7}}) {
    EnvironmentMap map(w, h, std::vector<Rgb>(static_cast<std::size_t>(w) * h));
    double total = 0.0;
    for (std::size_t i = 0; i < map.texel_count(); ++i) total += map.texel_solid_angle(i);
    EXPECT_NEAR(total, 4.0 * kPi, 1e-12);
  }
}

TEST(EnvironmentMap, DirectionsInTexelMapBackToTexel) {
  EnvironmentMap map(8, 4, std::vector<Rgb>(32));
  RandomStream r(StreamKey{1, StreamDomain::test});
  for (std::size_t t = 0; t < map.texel_count(); ++t) {
    for (int k = 0; k < 50; ++k) {
      const auto [u0, u1] = r.next_2d();
      const Vec3 d = map.direction_in_texel(t, 0.01 + 0.98 * u0, 0.01 + 0.98 * u1);
      EXPECT_NEAR(length(d), 1.0, 1e-12);
      EXPECT_EQ(map.texel_index(d), t);
    }
    r = RandomStream(StreamKey{1, StreamDomain::test, 0, 0, 0, static_cast<std::uint32_t>(t + 1)});
  }
}

TEST(EnvironmentMap, LongitudeWrapsAndLatitudeClamps) {
  EnvironmentMap map(4, 2, std::vector<Rgb>(8));
  EXPECT_EQ(map.texel_index(Vec3{1, 0.5, -1e-12}), map.texel_index(Vec3{1, 0.5, -1e-9}));
  EXPECT_EQ(map.texel_index(Vec3{0, 1, 0}) / 4, 0u);
  EXPECT_EQ(map.texel_index(Vec3{0, -1, 0}) / 4, 1u);
}

TEST(EnvironmentMap, RejectsNonFiniteTexels) {
  EXPECT_THROW(EnvironmentMap(1, 1, {Rgb(std::nan(""))}), ConfigError);
  EXPECT_THROW(EnvironmentMap(2, 2, {Rgb(1.0)}), ConfigError);
}

TEST(EnvDelta, IncreasedTexel) {
  const auto delta = build_env_delta(row_map({Rgb(1), Rgb(1)}), row_map({Rgb(1), Rgb(3)}));
  EXPECT_EQ(delta.map().texel(0), Rgb(0));
  EXPECT_EQ(delta.map().texel(1), Rgb(2));
  EXPECT_DOUBLE_EQ(delta.selection_probability(0), 0.0);
  EXPECT_DOUBLE_EQ(delta.selection_probability(1), 1.0);
}

TEST(EnvDelta, DecreasedTexelUsesAbsoluteValue) {
  const auto delta = build_env_delta(row_map({Rgb(1), Rgb(1)}), row_map({Rgb(0), Rgb(1)}));
  EXPECT_EQ(delta.map().texel(0), Rgb(-1));
  EXPECT_EQ(delta.map().texel(1), Rgb(0));
  EXPECT_DOUBLE_EQ(delta.selection_probability(0), 1.0);
  EXPECT_DOUBLE_EQ(delta.selection_probability(1), 0.0);
}

TEST(EnvDelta, IdenticalMapsAreEmpty) {
  const auto map = row_map({Rgb(1), Rgb(2), Rgb(3)});
  const auto delta = build_env_delta(map, map);
  EXPECT_TRUE(delta.empty());
  EXPECT_EQ(delta.pdf(Vec3{0, 1, 0}), 0.0);
  EXPECT_THROW(sample_env_delta(0.5, 0.5, delta), ContractViolation);
}

TEST(EnvDelta, ResolutionMismatchIsConfigError) {
  EXPECT_THROW(build_env_delta(row_map({Rgb(1)}), row_map({Rgb(1), Rgb(1)})), ConfigError);
}

TEST(EnvDelta, CdfMonotoneAndNormalised) {
  std::vector<Rgb> a(32), b(32);
  for (int i = 0; i < 32; ++i) {
    a[i] = Rgb(i % 3);
    b[i] = Rgb((i * 7) % 5);
  }
  const auto delta = build_env_delta({8, 4, a}, {8, 4, b});
  const auto& cdf = delta.distribution().cdf();
  for (std::size_t i = 1; i < cdf.size(); ++i) EXPECT_GE(cdf[i], cdf[i - 1]);
  EXPECT_EQ(cdf.back(), 1.0);
  for (int i = 0; i < 32; ++i) {
    if (a[i] == b[i]) {
      EXPECT_EQ(delta.selection_probability(i), 0.0);
    }
  }
}

TEST(EnvDelta, SamplingAlwaysReturnsTheOnlyChangedTexel) {
  const auto delta = build_env_delta(row_map({Rgb(1), Rgb(1)}), row_map({Rgb(1), Rgb(3)}));
  for (int i = 0; i < 1000; ++i) {
    RandomStream r(StreamKey{3, StreamDomain::test, 0, 0, 0, static_cast<std::uint32_t>(i)});
    const auto [u0, u1] = r.next_2d();
    const EnvSample s = sample_env_delta(u0, u1, delta);
    EXPECT_EQ(s.texel, 1u);
    EXPECT_EQ(s.value, Rgb(2));
    EXPECT_EQ(delta.map().texel_index(s.direction), 1u);
  }
}

TEST(EnvDelta, UniformMagnitudeGivesUniformSolidAngleDensity) {
  std::vector<Rgb> a(24, Rgb(1)), b(24);
  for (int i = 0; i < 24; ++i) b[i] = Rgb(i % 2 == 0 ? 2.0 : 0.0);
  const auto delta = build_env_delta({6, 4, a}, {6, 4, b});
  RandomStream r(StreamKey{5, StreamDomain::test});
  for (int i = 0; i < 200; ++i) {
    const auto [u0, u1] = r.next_2d();
    EXPECT_NEAR(sample_env_delta(u0, u1, delta).pdf, 1.0 / (4.0 * kPi), 1e-12);
  }
}

TEST(EnvDelta, SelectionProportionalToLuminance) {
  // Equal solid angles: a single row of four texels.
  const auto delta = build_env_delta(row_map({Rgb(0), Rgb(0), Rgb(0), Rgb(0)}),
                                     row_map({Rgb(1), Rgb(2), Rgb(3), Rgb(4)}));
  double sum = 0.0;
  for (int i = 0; i < 4; ++i) sum += i + 1;  // brute-force normaliser
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(delta.selection_probability(i), (i + 1) / sum, 1e-15);
}

TEST(EnvDelta, MonteCarloIntegralMatchesTexelSum) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> uni(0.0, 3.0);
  std::vector<Rgb> a(16), b(16);
  for (int i = 0; i < 16; ++i) {
    a[i] = Rgb(uni(gen), uni(gen), uni(gen));
    b[i] = i % 5 == 0 ? a[i] : Rgb(uni(gen), uni(gen), uni(gen));
  }
  const EnvironmentMap old_map(4, 4, a), new_map(4, 4, b);
  const auto delta = build_env_delta(old_map, new_map);
  Rgb exact;
  for (int i = 0; i < 16; ++i) exact += (b[i] - a[i]) * old_map.texel_solid_angle(i);

  constexpr int kSamples = 100000;
  Rgb sum, sum2;
  for (int s = 0; s < kSamples; ++s) {
    RandomStream r(StreamKey{7, StreamDomain::test, 0, 0, 0, static_cast<std::uint32_t>(s)});
    const auto [u0, u1] = r.next_2d();
    const EnvSample e = sample_env_delta(u0, u1, delta);
    const Rgb v = e.value / e.pdf;
    sum += v;
    sum2 += v * v;
  }
  for (int c = 0; c < 3; ++c) {
    const double mean = sum[c] / kSamples;
    const double var = sum2[c] / kSamples - mean * mean;
    const double se = std::sqrt(std::max(var, 0.0) / kSamples);
    EXPECT_LE(std::abs(mean - exact[c]), 3.0 * se + 1e-12) << "channel " << c;
  }
}

TEST(EnvironmentLight, SampledPdfMatchesEvaluatedPdf) {
  std::vector<Rgb> a(32), b(32);
  for (int i = 0; i < 32; ++i) {
    a[i] = Rgb(0.1 * (i % 4));
    b[i] = i < 8 ? Rgb(2.0) : a[i];
  }
  const EnvironmentLight env({8, 4, a}, {8, 4, b});
  double integral = 0.0;
  for (std::size_t t = 0; t < 32; ++t) {
    integral += env.pdf(env.map(LightState::static_state).direction_in_texel(t, 0.5, 0.5)) *
                env.map(LightState::static_state).texel_solid_angle(t);
  }
  EXPECT_NEAR(integral, 1.0, 1e-12);
  for (int s = 0; s < 500; ++s) {
    RandomStream r(StreamKey{9, StreamDomain::test, 0, 0, 0, static_cast<std::uint32_t>(s)});
    const double lobe = r.next_1d();
    const auto [u0, u1] = r.next_2d();
    const auto sample = env.sample(lobe, u0, u1);
    ASSERT_TRUE(sample.has_value());
    EXPECT_NEAR(sample->pdf, env.pdf(sample->direction), 1e-9 * sample->pdf);
  }
}

TEST(EnvironmentLight, ConstantMapsBroadcast) {
  std::vector<Rgb> texels(8, Rgb(0.5));
  texels[3] = Rgb(4.0);
  const EnvironmentLight env(EnvironmentMap(Rgb(0.5)), EnvironmentMap(4, 2, texels));
  EXPECT_EQ(env.map(LightState::static_state).texel_count(), 8u);
  EXPECT_FALSE(env.delta().empty());
  for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(env.texel_changed(t), t == 3);
}

TEST(EnvironmentLight, BlackEnvironmentIsInactive) {
  const EnvironmentLight env;
  EXPECT_FALSE(env.active());
  EXPECT_FALSE(env.sample(0.5, 0.5, 0.5).has_value());
}
