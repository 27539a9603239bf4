#pragma once

// Immutable scene: spheres and triangles tagged with the scene variant they belong to,
// Lambertian / mirror materials, area emitters with per-light-state emission, and an
// environment light in both states.
//
// Every primitive has a Presence:
//   both          part of the static level (set S)
//   dynamic_only  an inserted object (set D); absent from the static scene
//   static_only   an emitter's static-state placement when a light state moves it; absent
//                 from the dynamic scene
// A primitive whose presence is not `both` is "changed". The dynamic scene view
// (include_dynamic) intersects S, D and skips static_only; the static view (skip_dynamic)
// intersects S and static_only and skips D. Skipped primitives are fully transparent, but
// the traversal reports that the ray crossed one. This is the filtered-traversal form of
// re-casting the ray past each skipped object: the nearest non-skipped hit is the same.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "deltapath/distribution.hpp"
#include "deltapath/environment.hpp"
#include "deltapath/errors.hpp"
#include "deltapath/math.hpp"

namespace deltapath {

enum class MaterialKind { lambertian, mirror };
enum class Presence : std::uint8_t { both, dynamic_only, static_only };
enum class IntersectMode { include_dynamic, skip_dynamic };

inline IntersectMode intersect_mode(SceneVariant v) {
  return v == SceneVariant::dynamic_scene ? IntersectMode::include_dynamic : IntersectMode::skip_dynamic;
}
inline LightState light_state(SceneVariant v) {
  return v == SceneVariant::dynamic_scene ? LightState::dynamic_state : LightState::static_state;
}

struct Material {
  std::string name;
  Rgb albedo{0.5};
  Rgb emission{};
  MaterialKind kind = MaterialKind::lambertian;
};

struct Sphere {
  Vec3 center;
  double radius = 1.0;
};

struct Triangle {
  std::array<Vec3, 3> vertices;
  std::optional<std::array<Vec3, 3>> normals;  // per-vertex shading normals
};

struct PrimitiveDesc {
  std::variant<Sphere, Triangle> shape;
  std::string material;
  bool dynamic = false;
  std::string id;  // optional handle for light-state overrides
};

/// Per-emitter change applied in one light state.
struct EmitterOverride {
  std::optional<Rgb> emission;
  std::optional<Vec3> translate;
};

struct Camera {
  Vec3 position{0.0, 0.0, 3.5};
  Vec3 look_at{0.0, 0.0, 0.0};
  Vec3 up{0.0, 1.0, 0.0};
  double vfov_degrees = 40.0;
  int width = 32;
  int height = 32;

  void validate() const {
    if (width < 1 || height < 1) throw ConfigError("camera resolution must be positive");
    if (!(vfov_degrees > 0.0 && vfov_degrees < 180.0)) throw ConfigError("fov must be in (0, 180)");
    if (length(look_at - position) <= 0.0) throw ConfigError("camera look_at equals position");
  }

  /// Ray through the centre of pixel (x, y); y = 0 is the top row. No jitter.
  Ray primary_ray(int x, int y) const {
    const Vec3 forward = normalize(look_at - position);
    const Vec3 right = normalize(cross(forward, up));
    const Vec3 true_up = cross(right, forward);
    const double tan_half = std::tan(0.5 * vfov_degrees * kPi / 180.0);
    const double aspect = static_cast<double>(width) / height;
    const double sx = (2.0 * (x + 0.5) / width - 1.0) * tan_half * aspect;
    const double sy = (1.0 - 2.0 * (y + 0.5) / height) * tan_half;
    return {position, normalize(forward + right * sx + true_up * sy)};
  }
};

struct SceneDescription {
  std::vector<Material> materials;
  std::vector<PrimitiveDesc> primitives;
  std::map<std::string, EmitterOverride> static_overrides;
  std::map<std::string, EmitterOverride> dynamic_overrides;
  EnvironmentMap env_static;
  std::optional<EnvironmentMap> env_dynamic;  // defaults to env_static
  Camera camera;
  double ray_epsilon = 1e-4;
  int max_depth = 32;

  /// Moves every dynamic object; used to animate frames.
  void translate_dynamic(const Vec3& offset) {
    for (PrimitiveDesc& p : primitives) {
      if (!p.dynamic) continue;
      if (auto* s = std::get_if<Sphere>(&p.shape)) {
        s->center += offset;
      } else {
        for (Vec3& v : std::get<Triangle>(p.shape).vertices) v += offset;
      }
    }
  }
};

struct Intersection {
  double t = 0.0;
  Vec3 position;
  Vec3 normal;  // unit; outward for spheres, winding normal (or interpolated) for triangles
  std::uint32_t material_id = 0;
  bool is_dynamic = false;
  std::uint32_t primitive_id = 0;
};

/// Result of a traversal in one scene view.
struct TraversalHit {
  std::optional<Intersection> hit;
  bool crossed_changed = false;  // a skipped (absent) changed primitive lies before the hit
};

struct SegmentTest {
  bool blocked = false;          // some present primitive lies on the open segment
  bool touches_changed = false;  // some changed primitive (present or not) lies on it
};

struct LightSample {
  bool is_env = false;
  std::int32_t emitter = -1;
  std::size_t env_texel = 0;
  Vec3 direction;  // unit, from the shading point towards the light
  double distance = kInfinity;
  double pdf = 0.0;  // solid angle, includes the light-selection probability
  Vec3 light_normal;
};

class Scene {
 public:
  struct Primitive {
    bool is_sphere = false;
    std::uint32_t shape_index = 0;
    std::uint32_t material_id = 0;
    Presence presence = Presence::both;
    std::int32_t emitter = -1;
    double area = 0.0;

    bool changed() const { return presence != Presence::both; }
    bool present(IntersectMode mode) const {
      return mode == IntersectMode::include_dynamic ? presence != Presence::static_only
                                                    : presence != Presence::dynamic_only;
    }
  };

  struct Emitter {
    std::uint32_t primitive = 0;
    std::array<Rgb, 2> emission;
    bool changed = false;
  };

  explicit Scene(const SceneDescription& desc) : camera_(desc.camera) { build(desc); }

  const Camera& camera() const { return camera_; }
  double ray_epsilon() const { return ray_epsilon_; }
  int max_depth() const { return max_depth_; }
  const std::vector<Material>& materials() const { return materials_; }
  const Material& material(std::uint32_t id) const { return materials_[id]; }
  const std::vector<Primitive>& primitives() const { return primitives_; }
  const std::vector<Emitter>& emitters() const { return emitters_; }
  const EnvironmentLight& environment() const { return env_; }
  const Aabb& static_bounds() const { return static_bounds_; }
  bool has_dynamic() const { return has_dynamic_; }
  bool has_changes() const { return has_changed_primitives_; }

  const Sphere& sphere(std::uint32_t i) const { return spheres_[i]; }
  const Triangle& triangle(std::uint32_t i) const { return triangles_[i]; }

  /// Nearest hit in the given view, with t in (t_min, t_max).
  TraversalHit traverse(const Ray& ray, IntersectMode mode, double t_min = 0.0,
                        double t_max = kInfinity) const {
    double best_t = t_max;
    std::int32_t best = -1;
    double nearest_skipped = kInfinity;
    for (std::uint32_t p = 0; p < primitives_.size(); ++p) {
      const Primitive& prim = primitives_[p];
      const bool present = prim.present(mode);
      const double limit = present ? best_t : std::min(best_t, nearest_skipped);
      const double t = hit_distance(prim, ray, t_min, limit);
      if (!(t < limit)) continue;
      if (present) {
        best_t = t;
        best = static_cast<std::int32_t>(p);
      } else {
        nearest_skipped = t;
      }
    }
    TraversalHit result;
    result.crossed_changed = nearest_skipped < best_t;
    if (best >= 0) result.hit = make_intersection(static_cast<std::uint32_t>(best), ray, best_t);
    return result;
  }

  std::optional<Intersection> intersect(const Ray& ray, IntersectMode mode, double t_min = 0.0,
                                        double t_max = kInfinity) const {
    return traverse(ray, mode, t_min, t_max).hit;
  }

  SegmentTest test_segment(const Ray& ray, IntersectMode mode, double t_min, double t_max) const {
    SegmentTest result;
    for (const Primitive& prim : primitives_) {
      const bool present = prim.present(mode);
      if (!present && !prim.changed()) continue;
      if (result.blocked && (result.touches_changed || !prim.changed())) continue;
      const double t = hit_distance(prim, ray, t_min, t_max);
      if (!(t < t_max)) continue;
      if (present) result.blocked = true;
      if (prim.changed()) result.touches_changed = true;
      if (result.blocked && (result.touches_changed || !has_changed_primitives_)) break;
    }
    return result;
  }

  /// Emission leaving a hit point towards `to_viewer` under a light state. Triangles emit
  /// from the side their normal points to; spheres emit outward.
  Rgb eval_emission(const Intersection& hit, const Vec3& to_viewer, LightState state) const {
    const Primitive& prim = primitives_[hit.primitive_id];
    if (prim.emitter < 0) return Rgb{};
    if (dot(hit.normal, to_viewer) <= 0.0) return Rgb{};
    return emitters_[prim.emitter].emission[static_cast<int>(state)];
  }

  Rgb eval_environment(const Vec3& direction, LightState state) const {
    return env_.radiance(direction, state);
  }

  bool emitter_changed(std::uint32_t primitive_id) const {
    const Primitive& prim = primitives_[primitive_id];
    return prim.emitter >= 0 && emitters_[prim.emitter].changed;
  }

  bool has_lights() const { return env_selection_ > 0.0 || !emitter_distribution_.empty(); }

  /// Light-selection and placement. Densities are identical in both light states.
  std::optional<LightSample> sample_light(const Vec3& x, double u_select, double u_component,
                                          double u0, double u1) const {
    if (!has_lights()) return std::nullopt;
    LightSample ls;
    if (u_select < env_selection_) {
      const auto env_sample = env_.sample(u_component, u0, u1);
      if (!env_sample) return std::nullopt;
      ls.is_env = true;
      ls.env_texel = env_sample->texel;
      ls.direction = env_sample->direction;
      ls.pdf = env_selection_ * env_sample->pdf;
      return ls;
    }
    const double u = (u_select - env_selection_) / (1.0 - env_selection_);
    const auto pick = emitter_distribution_.sample(std::min(u, 0x1.fffffffffffffp-1));
    const Emitter& em = emitters_[pick.index];
    const Primitive& prim = primitives_[em.primitive];
    Vec3 point, normal;
    if (prim.is_sphere) {
      const Sphere& s = spheres_[prim.shape_index];
      const double z = 1.0 - 2.0 * u0;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = 2.0 * kPi * u1;
      normal = Vec3{r * std::cos(phi), r * std::sin(phi), z};
      point = s.center + normal * s.radius;
    } else {
      const Triangle& tri = triangles_[prim.shape_index];
      const double su = std::sqrt(u0);
      const double b0 = 1.0 - su;
      const double b1 = u1 * su;
      point = tri.vertices[0] * b0 + tri.vertices[1] * b1 + tri.vertices[2] * (1.0 - b0 - b1);
      normal = geometric_normal(tri);
    }
    const Vec3 to_light = point - x;
    const double dist2 = dot(to_light, to_light);
    const double dist = std::sqrt(dist2);
    if (!(dist > 0.0)) return std::nullopt;
    ls.direction = to_light / dist;
    ls.distance = dist;
    ls.light_normal = normal;
    const double cos_light = -dot(normal, ls.direction);
    if (cos_light <= 0.0) return std::nullopt;
    ls.emitter = static_cast<std::int32_t>(pick.index);
    ls.pdf = (1.0 - env_selection_) * pick.probability * dist2 / (prim.area * cos_light);
    return ls;
  }

  /// Solid-angle density with which sample_light would have produced this emitter hit.
  double emitter_pdf(const Intersection& on_light, const Vec3& from) const {
    const Primitive& prim = primitives_[on_light.primitive_id];
    if (prim.emitter < 0) return 0.0;
    const Vec3 d = on_light.position - from;
    const double dist2 = dot(d, d);
    const double cos_light = std::abs(dot(on_light.normal, d)) / std::sqrt(dist2);
    if (cos_light <= 0.0) return 0.0;
    return (1.0 - env_selection_) * emitter_distribution_.probability(prim.emitter) * dist2 /
           (prim.area * cos_light);
  }

  double environment_pdf(const Vec3& direction) const {
    return env_selection_ > 0.0 ? env_selection_ * env_.pdf(direction) : 0.0;
  }

  Rgb light_radiance(const LightSample& ls, LightState state) const {
    if (ls.is_env) return env_.texel_radiance(ls.env_texel, state);
    return emitters_[ls.emitter].emission[static_cast<int>(state)];
  }

  bool light_changed(const LightSample& ls) const {
    return ls.is_env ? env_.texel_changed(ls.env_texel) : emitters_[ls.emitter].changed;
  }

  /// Static (non-dynamic_only) primitives with their areas, for surface sampling.
  const Distribution1D& static_area_distribution() const { return static_area_; }

  /// Uniform point on a primitive. Returns (position, geometric normal).
  std::pair<Vec3, Vec3> sample_surface(std::uint32_t primitive_id, double u0, double u1) const {
    const Primitive& prim = primitives_[primitive_id];
    if (prim.is_sphere) {
      const Sphere& s = spheres_[prim.shape_index];
      const double z = 1.0 - 2.0 * u0;
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = 2.0 * kPi * u1;
      const Vec3 n{r * std::cos(phi), r * std::sin(phi), z};
      return {s.center + n * s.radius, n};
    }
    const Triangle& tri = triangles_[prim.shape_index];
    const double su = std::sqrt(u0);
    const double b0 = 1.0 - su;
    const double b1 = u1 * su;
    return {tri.vertices[0] * b0 + tri.vertices[1] * b1 + tri.vertices[2] * (1.0 - b0 - b1),
            geometric_normal(tri)};
  }

 private:
  static Vec3 geometric_normal(const Triangle& tri) {
    return normalize(cross(tri.vertices[1] - tri.vertices[0], tri.vertices[2] - tri.vertices[0]));
  }

  double hit_distance(const Primitive& prim, const Ray& ray, double t_min, double t_max) const {
    if (prim.is_sphere) {
      const Sphere& s = spheres_[prim.shape_index];
      const Vec3 oc = ray.origin - s.center;
      const double b = dot(oc, ray.direction);
      const double c = dot(oc, oc) - s.radius * s.radius;
      const double disc = b * b - c;
      if (disc < 0.0) return kInfinity;
      const double root = std::sqrt(disc);
      const double t0 = -b - root;
      if (t0 > t_min && t0 < t_max) return t0;
      const double t1 = -b + root;
      if (t1 > t_min && t1 < t_max) return t1;
      return kInfinity;
    }
    // Moller-Trumbore
    const Triangle& tri = triangles_[prim.shape_index];
    const Vec3 e1 = tri.vertices[1] - tri.vertices[0];
    const Vec3 e2 = tri.vertices[2] - tri.vertices[0];
    const Vec3 p = cross(ray.direction, e2);
    const double det = dot(e1, p);
    if (std::abs(det) < 1e-14) return kInfinity;
    const double inv_det = 1.0 / det;
    const Vec3 s = ray.origin - tri.vertices[0];
    const double u = dot(s, p) * inv_det;
    if (u < 0.0 || u > 1.0) return kInfinity;
    const Vec3 q = cross(s, e1);
    const double v = dot(ray.direction, q) * inv_det;
    if (v < 0.0 || u + v > 1.0) return kInfinity;
    const double t = dot(e2, q) * inv_det;
    return (t > t_min && t < t_max) ? t : kInfinity;
  }

  Intersection make_intersection(std::uint32_t p, const Ray& ray, double t) const {
    const Primitive& prim = primitives_[p];
    Intersection hit;
    hit.t = t;
    hit.position = ray.at(t);
    hit.material_id = prim.material_id;
    hit.is_dynamic = prim.presence == Presence::dynamic_only;
    hit.primitive_id = p;
    if (prim.is_sphere) {
      const Sphere& s = spheres_[prim.shape_index];
      hit.normal = normalize(hit.position - s.center);
    } else {
      const Triangle& tri = triangles_[prim.shape_index];
      if (tri.normals) {
        const Vec3 e1 = tri.vertices[1] - tri.vertices[0];
        const Vec3 e2 = tri.vertices[2] - tri.vertices[0];
        const Vec3 d = hit.position - tri.vertices[0];
        // Barycentrics by area ratios.
        const Vec3 n = cross(e1, e2);
        const double inv = 1.0 / dot(n, n);
        const double b1 = dot(cross(d, e2), n) * inv;
        const double b2 = dot(cross(e1, d), n) * inv;
        const auto& ns = *tri.normals;
        hit.normal = normalize(ns[0] * (1.0 - b1 - b2) + ns[1] * b1 + ns[2] * b2);
      } else {
        hit.normal = geometric_normal(tri);
      }
    }
    return hit;
  }

  void add_primitive(const std::variant<Sphere, Triangle>& shape, std::uint32_t material,
                     Presence presence, std::array<Rgb, 2> emission) {
    Primitive prim;
    prim.material_id = material;
    prim.presence = presence;
    if (const auto* s = std::get_if<Sphere>(&shape)) {
      if (!(s->radius > 0.0) || !is_finite(s->center)) throw ConfigError("sphere radius must be > 0");
      prim.is_sphere = true;
      prim.shape_index = static_cast<std::uint32_t>(spheres_.size());
      prim.area = 4.0 * kPi * s->radius * s->radius;
      spheres_.push_back(*s);
    } else {
      const Triangle& tri = std::get<Triangle>(shape);
      const Vec3 n = cross(tri.vertices[1] - tri.vertices[0], tri.vertices[2] - tri.vertices[0]);
      prim.area = 0.5 * length(n);
      if (!(prim.area > 1e-12)) throw ConfigError("triangle vertices are collinear");
      prim.shape_index = static_cast<std::uint32_t>(triangles_.size());
      triangles_.push_back(tri);
    }
    if (presence == Presence::dynamic_only) emission[0] = Rgb{};
    if (presence == Presence::static_only) emission[1] = Rgb{};
    if (!emission[0].is_black() || !emission[1].is_black()) {
      prim.emitter = static_cast<std::int32_t>(emitters_.size());
      emitters_.push_back({static_cast<std::uint32_t>(primitives_.size()), emission,
                           presence != Presence::both || !(emission[0] == emission[1])});
    }
    primitives_.push_back(prim);
  }

  static std::variant<Sphere, Triangle> translated(std::variant<Sphere, Triangle> shape,
                                                   const Vec3& offset) {
    if (auto* s = std::get_if<Sphere>(&shape)) {
      s->center += offset;
    } else {
      for (Vec3& v : std::get<Triangle>(shape).vertices) v += offset;
    }
    return shape;
  }

  void build(const SceneDescription& desc) {
    camera_.validate();
    ray_epsilon_ = desc.ray_epsilon;
    max_depth_ = desc.max_depth;
    if (!(ray_epsilon_ >= 0.0)) throw ConfigError("ray_epsilon must be non-negative");
    if (max_depth_ < 0 || max_depth_ > 120) throw ConfigError("max_depth must be in [0, 120]");

    std::map<std::string, std::uint32_t> material_ids;
    for (const Material& m : desc.materials) {
      for (int c = 0; c < 3; ++c) {
        if (!(m.albedo[c] >= 0.0 && m.albedo[c] <= 1.0)) {
          throw ConfigError("material '" + m.name + "' albedo must lie in [0,1]");
        }
        if (!(m.emission[c] >= 0.0) || !std::isfinite(m.emission[c])) {
          throw ConfigError("material '" + m.name + "' emission must be finite and >= 0");
        }
      }
      if (!material_ids.emplace(m.name, static_cast<std::uint32_t>(materials_.size())).second) {
        throw ConfigError("duplicate material '" + m.name + "'");
      }
      materials_.push_back(m);
    }

    for (const auto* overrides : {&desc.static_overrides, &desc.dynamic_overrides}) {
      for (const auto& [id, o] : *overrides) {
        const bool known = std::any_of(desc.primitives.begin(), desc.primitives.end(),
                                       [&](const PrimitiveDesc& p) { return p.id == id; });
        if (!known) throw ConfigError("light state references unknown emitter '" + id + "'");
        if (o.emission && (!o.emission->is_finite() || o.emission->r < 0.0 || o.emission->g < 0.0 ||
                           o.emission->b < 0.0)) {
          throw ConfigError("emission override for '" + id + "' must be finite and >= 0");
        }
      }
    }

    // Static placements first, so the static primitives keep the same ids whether or not
    // dynamic content is present.
    for (const bool dynamic_pass : {false, true}) {
      for (const PrimitiveDesc& p : desc.primitives) {
        const auto mat = material_ids.find(p.material);
        if (mat == material_ids.end()) throw ConfigError("unknown material '" + p.material + "'");
        std::array<Rgb, 2> emission{materials_[mat->second].emission, materials_[mat->second].emission};
        std::array<Vec3, 2> offset{};
        if (!p.id.empty()) {
          if (auto it = desc.static_overrides.find(p.id); it != desc.static_overrides.end()) {
            if (it->second.emission) emission[0] = *it->second.emission;
            if (it->second.translate) offset[0] = *it->second.translate;
          }
          if (auto it = desc.dynamic_overrides.find(p.id); it != desc.dynamic_overrides.end()) {
            if (it->second.emission) emission[1] = *it->second.emission;
            if (it->second.translate) offset[1] = *it->second.translate;
          }
        }
        const bool moved = !p.dynamic && !(offset[0] == offset[1]);
        if (!dynamic_pass) {
          if (p.dynamic) continue;
          add_primitive(translated(p.shape, offset[0]), mat->second,
                        moved ? Presence::static_only : Presence::both, emission);
        } else if (p.dynamic || moved) {
          add_primitive(translated(p.shape, offset[1]), mat->second, Presence::dynamic_only, emission);
        }
      }
    }

    env_ = EnvironmentLight(desc.env_static, desc.env_dynamic.value_or(desc.env_static));

    std::vector<double> emitter_weights;
    for (const Emitter& e : emitters_) {
      const double power = std::max(e.emission[0].luminance(), e.emission[1].luminance());
      emitter_weights.push_back(power * primitives_[e.primitive].area);
    }
    emitter_distribution_ = Distribution1D(emitter_weights);
    if (env_.active()) env_selection_ = emitter_distribution_.empty() ? 1.0 : 0.5;

    std::vector<double> areas;
    for (std::uint32_t i = 0; i < primitives_.size(); ++i) {
      const Primitive& prim = primitives_[i];
      has_dynamic_ |= prim.presence == Presence::dynamic_only;
      has_changed_primitives_ |= prim.changed();
      const bool is_static = prim.presence != Presence::dynamic_only;
      areas.push_back(is_static ? prim.area : 0.0);
      if (!is_static) continue;
      if (prim.is_sphere) {
        const Sphere& s = spheres_[prim.shape_index];
        static_bounds_.extend(s.center - Vec3{s.radius, s.radius, s.radius});
        static_bounds_.extend(s.center + Vec3{s.radius, s.radius, s.radius});
      } else {
        for (const Vec3& v : triangles_[prim.shape_index].vertices) static_bounds_.extend(v);
      }
    }
    static_area_ = Distribution1D(areas);
  }

  Camera camera_;
  double ray_epsilon_ = 1e-4;
  int max_depth_ = 32;
  std::vector<Material> materials_;
  std::vector<Sphere> spheres_;
  std::vector<Triangle> triangles_;
  std::vector<Primitive> primitives_;
  std::vector<Emitter> emitters_;
  Distribution1D emitter_distribution_;
  Distribution1D static_area_;
  EnvironmentLight env_;
  double env_selection_ = 0.0;
  Aabb static_bounds_;
  bool has_dynamic_ = false;
  bool has_changed_primitives_ = false;
};

}  // namespace deltapath
