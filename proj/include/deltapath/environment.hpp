#pragma once

// Lat-long environment maps, the signed before/after difference map and their
// importance samplers.
//
// Convention: +y is up. Texel row j covers polar angle theta in [j, j+1] * pi / H measured
// from +y, column i covers azimuth phi = atan2(z, x) in [i, i+1] * 2pi / W. Longitude wraps,
// latitude clamps. Radiance is piecewise constant per texel, and sampling picks a texel
// from a discrete CDF and then a direction uniformly in solid angle inside that texel, so
// the returned densities are exact.

#include <array>
#include <cmath>
#include <optional>
#include <vector>

#include "deltapath/distribution.hpp"
#include "deltapath/errors.hpp"
#include "deltapath/math.hpp"

namespace deltapath {

enum class LightState : int { static_state = 0, dynamic_state = 1 };

class EnvironmentMap {
 public:
  EnvironmentMap() : EnvironmentMap(Rgb{}) {}
  explicit EnvironmentMap(Rgb constant) : width_(1), height_(1), texels_(1, constant) {}
  EnvironmentMap(int width, int height, std::vector<Rgb> texels)
      : width_(width), height_(height), texels_(std::move(texels)) {
    if (width_ <= 0 || height_ <= 0 ||
        texels_.size() != static_cast<std::size_t>(width_) * height_) {
      throw ConfigError("environment map size does not match its texel count");
    }
    for (const Rgb& t : texels_) {
      if (!t.is_finite()) throw ConfigError("environment map texels must be finite");
    }
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t texel_count() const { return texels_.size(); }
  const Rgb& texel(std::size_t i) const { return texels_[i]; }
  const std::vector<Rgb>& texels() const { return texels_; }

  bool is_black() const {
    for (const Rgb& t : texels_) {
      if (!t.is_black()) return false;
    }
    return true;
  }

  EnvironmentMap resized_constant(int width, int height) const {
    if (texels_.size() != 1) throw ConfigError("only constant maps can be broadcast");
    return {width, height, std::vector<Rgb>(static_cast<std::size_t>(width) * height, texels_[0])};
  }

  std::size_t texel_index(const Vec3& dir) const {
    const double cos_theta = std::clamp(dir.y, -1.0, 1.0);
    const double theta = std::acos(cos_theta);
    double phi = std::atan2(dir.z, dir.x);
    if (phi < 0.0) phi += 2.0 * kPi;
    int i = static_cast<int>(phi * (0.5 * kInvPi) * width_);
    int j = static_cast<int>(theta * kInvPi * height_);
    i = ((i % width_) + width_) % width_;
    j = std::clamp(j, 0, height_ - 1);
    return static_cast<std::size_t>(j) * width_ + i;
  }

  Rgb lookup(const Vec3& dir) const { return texels_[texel_index(dir)]; }

  double texel_solid_angle(std::size_t index) const {
    const int j = static_cast<int>(index / width_);
    return (2.0 * kPi / width_) * (cos_theta_edge(j) - cos_theta_edge(j + 1));
  }

  /// Direction uniformly distributed (in solid angle) inside a texel.
  Vec3 direction_in_texel(std::size_t index, double u_phi, double u_theta) const {
    const int i = static_cast<int>(index % width_);
    const int j = static_cast<int>(index / width_);
    const double phi = (i + u_phi) * (2.0 * kPi / width_);
    const double c0 = cos_theta_edge(j);
    const double c1 = cos_theta_edge(j + 1);
    const double cos_theta = c0 - u_theta * (c0 - c1);
    const double sin_theta = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    return {sin_theta * std::cos(phi), cos_theta, sin_theta * std::sin(phi)};
  }

 private:
  double cos_theta_edge(int j) const {
    if (j <= 0) return 1.0;
    if (j >= height_) return -1.0;
    return std::cos(j * kPi / height_);
  }

  int width_;
  int height_;
  std::vector<Rgb> texels_;
};

struct EnvSample {
  Vec3 direction;
  Rgb value;    // signed for the delta map
  double pdf;   // solid-angle density
  std::size_t texel;
};

/// E_delta = E_new - E_old with an importance sampler proportional to the solid-angle
/// weighted luminance of |E_delta|.
class SignedEnvDelta {
 public:
  SignedEnvDelta() = default;
  SignedEnvDelta(EnvironmentMap delta, Distribution1D distribution)
      : delta_(std::move(delta)), distribution_(std::move(distribution)) {}

  bool empty() const { return distribution_.empty(); }
  const EnvironmentMap& map() const { return delta_; }
  const Distribution1D& distribution() const { return distribution_; }

  double selection_probability(std::size_t texel) const { return distribution_.probability(texel); }

  double pdf(const Vec3& dir) const {
    if (empty()) return 0.0;
    const std::size_t t = delta_.texel_index(dir);
    return distribution_.probability(t) / delta_.texel_solid_angle(t);
  }

 private:
  EnvironmentMap delta_;
  Distribution1D distribution_;
};

inline SignedEnvDelta build_env_delta(const EnvironmentMap& old_map, const EnvironmentMap& new_map) {
  if (old_map.width() != new_map.width() || old_map.height() != new_map.height()) {
    throw ConfigError("environment maps differ in resolution");
  }
  std::vector<Rgb> diff(old_map.texel_count());
  std::vector<double> weights(old_map.texel_count());
  EnvironmentMap shape(old_map.width(), old_map.height(), std::vector<Rgb>(diff.size()));
  for (std::size_t i = 0; i < diff.size(); ++i) {
    diff[i] = new_map.texel(i) - old_map.texel(i);
    weights[i] = abs(diff[i]).luminance() * shape.texel_solid_angle(i);
  }
  return {EnvironmentMap(old_map.width(), old_map.height(), std::move(diff)), Distribution1D(weights)};
}

/// Draws a direction with density proportional to |E_delta|. The caller must branch on
/// empty() first: an identical pair of maps has nothing to sample.
inline EnvSample sample_env_delta(double u0, double u1, const SignedEnvDelta& delta) {
  if (delta.empty()) throw ContractViolation("sample_env_delta called on an empty delta");
  const auto pick = delta.distribution().sample(u0);
  const EnvironmentMap& map = delta.map();
  const double pdf = pick.probability / map.texel_solid_angle(pick.index);
  return {map.direction_in_texel(pick.index, pick.remapped, u1), map.texel(pick.index), pdf,
          pick.index};
}

/// Environment lighting in both light states, sampled with a mixture of the mean map and
/// the signed-delta map. The density does not depend on the light state, which keeps the
/// two traversals of a correlated pair on identical light samples.
class EnvironmentLight {
 public:
  EnvironmentLight() : EnvironmentLight(EnvironmentMap{}, EnvironmentMap{}) {}

  EnvironmentLight(EnvironmentMap static_map, EnvironmentMap dynamic_map) {
    if (static_map.width() != dynamic_map.width() || static_map.height() != dynamic_map.height()) {
      if (static_map.texel_count() == 1) {
        static_map = static_map.resized_constant(dynamic_map.width(), dynamic_map.height());
      } else if (dynamic_map.texel_count() == 1) {
        dynamic_map = dynamic_map.resized_constant(static_map.width(), static_map.height());
      }
    }
    delta_ = build_env_delta(static_map, dynamic_map);
    std::vector<double> weights(static_map.texel_count());
    for (std::size_t i = 0; i < weights.size(); ++i) {
      weights[i] = 0.5 * (static_map.texel(i).luminance() + dynamic_map.texel(i).luminance()) *
                   static_map.texel_solid_angle(i);
    }
    base_ = Distribution1D(weights);
    maps_ = {std::move(static_map), std::move(dynamic_map)};
    if (!delta_.empty()) delta_weight_ = base_.empty() ? 1.0 : 0.5;
  }

  const EnvironmentMap& map(LightState state) const { return maps_[static_cast<int>(state)]; }
  const SignedEnvDelta& delta() const { return delta_; }

  bool active() const { return !base_.empty() || !delta_.empty(); }

  Rgb radiance(const Vec3& dir, LightState state) const { return map(state).lookup(dir); }

  bool changed(const Vec3& dir) const {
    const std::size_t t = maps_[0].texel_index(dir);
    return !(maps_[0].texel(t) == maps_[1].texel(t));
  }

  double pdf(const Vec3& dir) const {
    const std::size_t t = maps_[0].texel_index(dir);
    const double omega = maps_[0].texel_solid_angle(t);
    double p = 0.0;
    if (delta_weight_ < 1.0) p += (1.0 - delta_weight_) * base_.probability(t) / omega;
    if (delta_weight_ > 0.0) p += delta_weight_ * delta_.selection_probability(t) / omega;
    return p;
  }

  /// u_component picks the mixture lobe; (u0, u1) place the direction.
  std::optional<EnvSample> sample(double u_component, double u0, double u1) const {
    if (!active()) return std::nullopt;
    const bool use_delta = u_component < delta_weight_;
    const auto pick = (use_delta ? delta_.distribution() : base_).sample(u0);
    const Vec3 dir = maps_[0].direction_in_texel(pick.index, pick.remapped, u1);
    const double omega = maps_[0].texel_solid_angle(pick.index);
    double pdf = 0.0;
    if (delta_weight_ < 1.0) pdf += (1.0 - delta_weight_) * base_.probability(pick.index) / omega;
    if (delta_weight_ > 0.0) pdf += delta_weight_ * delta_.selection_probability(pick.index) / omega;
    return EnvSample{dir, Rgb{}, pdf, pick.index};
  }

  /// Radiance of the texel a sample came from (avoids re-looking-up boundary directions).
  Rgb texel_radiance(std::size_t texel, LightState state) const { return map(state).texel(texel); }
  bool texel_changed(std::size_t texel) const { return !(maps_[0].texel(texel) == maps_[1].texel(texel)); }

 private:
  std::array<EnvironmentMap, 2> maps_;
  Distribution1D base_;
  SignedEnvDelta delta_;
  double delta_weight_ = 0.0;
};

}  // namespace deltapath
