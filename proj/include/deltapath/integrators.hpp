#pragma once

// Unidirectional path tracing with next-event estimation and balance-heuristic MIS, plus
// the three difference estimators built on it:
//
//   trace_additive     paths in the dynamic scene, counting only contributions whose
//                      path touched something that changed
//   trace_subtractive  the same restriction, traced in the static scene
//   trace_delta_pss    one primary-sample-space point traced through both scenes; the
//                      contribution is the difference
//
// A contribution is "counted" when the path prefix interacted with a changed primitive
// (hit it, or passed through its location), or when the contribution itself was carried by
// a shadow segment through such a location, an emitter whose emission or placement changed,
// or an environment texel that changed. The predicate is symmetric between the two scenes:
// contributions that are not counted are bitwise identical in both, so
// delta_pss == additive - subtractive holds sample by sample.
//
// Dimension layout: bounce b reads dimensions [8b, 8b + 8):
//   +0 light selection, +1 environment mixture lobe, +2 +3 light position,
//   +4 +5 BSDF direction, +6 Russian roulette, +7 unused.

#include <array>
#include <cstdint>

#include "deltapath/math.hpp"
#include "deltapath/rng.hpp"
#include "deltapath/scene.hpp"

namespace deltapath {

inline constexpr std::uint32_t kDimensionsPerBounce = 8;

struct IntegratorSettings {
  int max_depth = 32;
  int rr_start = 3;
  double ray_epsilon = 1e-4;
  bool next_event = true;

  static IntegratorSettings from_scene(const Scene& scene) {
    IntegratorSettings s;
    s.max_depth = scene.max_depth();
    s.ray_epsilon = scene.ray_epsilon();
    return s;
  }
};

/// Cosine-weighted hemisphere direction around +z.
inline Vec3 cosine_hemisphere(double u0, double u1) {
  const double r = std::sqrt(u0);
  const double phi = 2.0 * kPi * u1;
  return {r * std::cos(phi), r * std::sin(phi), std::sqrt(std::max(0.0, 1.0 - u0))};
}

inline double balance_heuristic(double pdf_a, double pdf_b) {
  const double sum = pdf_a + pdf_b;
  return sum > 0.0 ? pdf_a / sum : 0.0;
}

struct PathResult {
  Rgb full;
  Rgb counted;
  bool affected = false;  // at least one counted contribution was produced
};

struct NullSink {
  void operator()(const Rgb&, bool) const {}
};

/// Path-space classes: paths that never meet changed content, paths of the dynamic scene
/// that do, and paths of the static scene that do.
enum class PathClass { unaffected = 0, additive = 1, subtractive = 2 };

inline PathClass classify(SceneVariant variant, bool counted) {
  if (!counted) return PathClass::unaffected;
  return variant == SceneVariant::dynamic_scene ? PathClass::additive : PathClass::subtractive;
}

/// Sink that sums contributions per class. Each contribution is one path (a prefix of the
/// traced random walk), and lands in exactly one class.
struct ClassTally {
  SceneVariant variant = SceneVariant::dynamic_scene;
  std::array<Rgb, 3> sum{};
  std::array<std::uint64_t, 3> paths{};

  void operator()(const Rgb& value, bool counted) {
    const auto c = static_cast<std::size_t>(classify(variant, counted));
    sum[c] += value;
    ++paths[c];
  }
};

/// Core path tracer. `sink(value, counted)` sees every non-zero contribution.
template <typename Sink = NullSink>
PathResult trace_path(const Scene& scene, SceneVariant variant, Ray ray, RandomStream& stream,
                      const IntegratorSettings& settings, Sink&& sink = Sink{}) {
  const IntersectMode mode = intersect_mode(variant);
  const LightState state = light_state(variant);
  const EnvironmentLight& env = scene.environment();

  PathResult result;
  Rgb throughput(1.0);
  bool touched = false;
  bool prev_specular = true;
  double prev_pdf = 0.0;
  Vec3 prev_position = ray.origin;
  double t_min = 0.0;

  const auto add = [&](const Rgb& value, bool counted) {
    if (value.is_black()) return;
    result.full += value;
    if (counted) {
      result.counted += value;
      result.affected = true;
    }
    sink(value, counted);
  };

  for (int bounce = 0;; ++bounce) {
    const std::uint32_t base = kDimensionsPerBounce * static_cast<std::uint32_t>(bounce);
    if (base + kDimensionsPerBounce > RandomStream::kMaxDimensions) {
      throw StreamExhausted("path depth exceeds the random stream dimension budget");
    }
    stream.set_dimension(base);
    const double u_select = stream.next_1d();
    const double u_lobe = stream.next_1d();
    const auto [u_l0, u_l1] = stream.next_2d();
    const auto [u_b0, u_b1] = stream.next_2d();
    const double u_rr = stream.next_1d();

    const TraversalHit traversal = scene.traverse(ray, mode, t_min);
    touched |= traversal.crossed_changed;

    if (!traversal.hit) {
      const Rgb le = env.radiance(ray.direction, state);
      if (!le.is_black()) {
        const double w = (prev_specular || !settings.next_event)
                             ? 1.0
                             : balance_heuristic(prev_pdf, scene.environment_pdf(ray.direction));
        add(throughput * le * w, touched || env.changed(ray.direction));
      }
      break;
    }

    const Intersection& hit = *traversal.hit;
    const Scene::Primitive& prim = scene.primitives()[hit.primitive_id];
    touched |= prim.changed();
    const Vec3 wo = -ray.direction;

    const Rgb le = scene.eval_emission(hit, wo, state);
    if (!le.is_black()) {
      const double w = (prev_specular || !settings.next_event)
                           ? 1.0
                           : balance_heuristic(prev_pdf, scene.emitter_pdf(hit, prev_position));
      add(throughput * le * w, touched || scene.emitter_changed(hit.primitive_id));
    }

    if (bounce >= settings.max_depth) break;

    const Material& material = scene.material(hit.material_id);
    const Vec3 n = dot(hit.normal, wo) < 0.0 ? -hit.normal : hit.normal;
    Vec3 wi;
    if (material.kind == MaterialKind::mirror) {
      wi = reflect(ray.direction, n);
      throughput *= material.albedo;
      prev_specular = true;
    } else {
      if (settings.next_event) {
        if (const auto ls = scene.sample_light(hit.position, u_select, u_lobe, u_l0, u_l1)) {
          const double cos_theta = dot(n, ls->direction);
          const Rgb li = scene.light_radiance(*ls, state);
          if (cos_theta > 0.0 && !li.is_black()) {
            const double t_max = ls->is_env ? kInfinity : ls->distance - settings.ray_epsilon;
            const SegmentTest seg =
                scene.test_segment({hit.position, ls->direction}, mode, settings.ray_epsilon, t_max);
            if (!seg.blocked) {
              const double w = balance_heuristic(ls->pdf, cos_theta * kInvPi);
              const Rgb value = throughput * material.albedo * li * (kInvPi * cos_theta * w / ls->pdf);
              add(value, touched || seg.touches_changed || scene.light_changed(*ls));
            }
          }
        }
      }
      const Vec3 local = cosine_hemisphere(u_b0, u_b1);
      wi = Frame::from_normal(n).to_world(local);
      prev_pdf = local.z * kInvPi;
      if (!(prev_pdf > 0.0)) break;
      throughput *= material.albedo;
      prev_specular = false;
    }

    if (bounce >= settings.rr_start) {
      const double q = std::min(1.0, throughput.max_component());
      if (!(u_rr < q)) break;
      throughput /= q;
    }
    if (throughput.is_black()) break;

    prev_position = hit.position;
    ray = Ray{hit.position, wi};
    t_min = settings.ray_epsilon;
  }
  return result;
}

inline Rgb trace_reference(const Scene& scene, SceneVariant variant, const Ray& ray,
                           RandomStream& stream, const IntegratorSettings& settings) {
  return trace_path(scene, variant, ray, stream, settings).full;
}

/// L_+ sample: dynamic scene, counted contributions only.
inline Rgb trace_additive(const Scene& scene, const Ray& ray, RandomStream& stream,
                          const IntegratorSettings& settings) {
  return trace_path(scene, SceneVariant::dynamic_scene, ray, stream, settings).counted;
}

/// L_- sample: static scene, counted contributions only.
inline Rgb trace_subtractive(const Scene& scene, const Ray& ray, RandomStream& stream,
                             const IntegratorSettings& settings) {
  return trace_path(scene, SceneVariant::static_scene, ray, stream, settings).counted;
}

struct DeltaSample {
  Rgb delta;       // plus_full - minus_full
  Rgb plus;        // counted dynamic-scene contributions (an L_+ sample)
  Rgb minus;       // counted static-scene contributions (an L_- sample)
  Rgb plus_full;   // full dynamic-scene radiance of this sample
  Rgb minus_full;  // full static-scene radiance of this sample
  bool plus_affected = false;
  bool minus_affected = false;
};

/// Both scenes driven by the same hypercube point. The stream is forked, so the caller's
/// counter is left untouched.
inline DeltaSample trace_delta_pss(const Scene& scene, const Ray& ray, const RandomStream& stream,
                                   const IntegratorSettings& settings) {
  RandomStream plus_stream = fork_for_scene(stream, SceneVariant::dynamic_scene);
  RandomStream minus_stream = fork_for_scene(stream, SceneVariant::static_scene);
  const PathResult plus = trace_path(scene, SceneVariant::dynamic_scene, ray, plus_stream, settings);
  const PathResult minus = trace_path(scene, SceneVariant::static_scene, ray, minus_stream, settings);
  return {plus.full - minus.full, plus.counted, minus.counted, plus.full, minus.full, plus.affected, minus.affected};
}

}  // namespace deltapath
