#pragma once

// Reference implementations used only by tests. They share no intersection, sampling or
// random-number code with the library: a brute-force BSDF-sampling path tracer driven by
// std::mt19937_64, with its own geometry routines.

#include <cmath>
#include <random>
#include <vector>

#include "deltapath/environment.hpp"
#include "deltapath/math.hpp"
#include "deltapath/scene.hpp"

namespace oracle {

using deltapath::EnvironmentMap;
using deltapath::Rgb;
using deltapath::Vec3;

struct Shape {
  bool is_sphere = false;
  Vec3 center;
  double radius = 0.0;
  Vec3 a, b, c;
  Rgb albedo;
  Rgb emission;
  bool mirror = false;
};

struct World {
  std::vector<Shape> shapes;
  std::vector<Shape> ghosts;  // objects absent from this variant (only tested for crossings)
  std::vector<bool> marked;   // per shape: touching it classifies the path
  EnvironmentMap env;
};

/// variant_dynamic selects the scene with dynamic objects and the dynamic light state.
inline World make_world(const deltapath::SceneDescription& desc, bool variant_dynamic) {
  World w;
  w.env = variant_dynamic ? desc.env_dynamic.value_or(desc.env_static) : desc.env_static;
  for (const auto& p : desc.primitives) {
    const deltapath::Material* mat = nullptr;
    for (const auto& m : desc.materials) {
      if (m.name == p.material) mat = &m;
    }
    Shape s;
    s.albedo = mat->albedo;
    s.emission = mat->emission;
    s.mirror = mat->kind == deltapath::MaterialKind::mirror;
    const auto& overrides = variant_dynamic ? desc.dynamic_overrides : desc.static_overrides;
    Vec3 offset;
    if (auto it = overrides.find(p.id); !p.id.empty() && it != overrides.end()) {
      if (it->second.emission) s.emission = *it->second.emission;
      if (it->second.translate) offset = *it->second.translate;
    }
    if (const auto* sp = std::get_if<deltapath::Sphere>(&p.shape)) {
      s.is_sphere = true;
      s.center = sp->center + offset;
      s.radius = sp->radius;
    } else {
      const auto& t = std::get<deltapath::Triangle>(p.shape);
      s.a = t.vertices[0] + offset;
      s.b = t.vertices[1] + offset;
      s.c = t.vertices[2] + offset;
    }
    if (p.dynamic && !variant_dynamic) {
      w.ghosts.push_back(s);
    } else {
      w.shapes.push_back(s);
      w.marked.push_back(p.dynamic);
    }
  }
  return w;
}

/// Smallest t in (t_min, inf) or +inf.
inline double hit_shape(const Shape& s, const Vec3& o, const Vec3& d, double t_min) {
  if (s.is_sphere) {
    // a t^2 + b t + c = 0 in the textbook form.
    const Vec3 oc = o - s.center;
    const double a = dot(d, d);
    const double b = 2.0 * dot(oc, d);
    const double c = dot(oc, oc) - s.radius * s.radius;
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return deltapath::kInfinity;
    const double sq = std::sqrt(disc);
    const double t0 = (-b - sq) / (2.0 * a);
    const double t1 = (-b + sq) / (2.0 * a);
    if (t0 > t_min) return t0;
    if (t1 > t_min) return t1;
    return deltapath::kInfinity;
  }
  // Plane intersection followed by three edge-sign tests.
  const Vec3 n = cross(s.b - s.a, s.c - s.a);
  const double denom = dot(n, d);
  if (std::abs(denom) < 1e-14) return deltapath::kInfinity;
  const double t = dot(n, s.a - o) / denom;
  if (!(t > t_min)) return deltapath::kInfinity;
  const Vec3 p = o + d * t;
  if (dot(cross(s.b - s.a, p - s.a), n) < 0.0) return deltapath::kInfinity;
  if (dot(cross(s.c - s.b, p - s.b), n) < 0.0) return deltapath::kInfinity;
  if (dot(cross(s.a - s.c, p - s.c), n) < 0.0) return deltapath::kInfinity;
  return t;
}

struct Contributions {
  Rgb total;
  Rgb marked;  // part carried by paths that touched a marked shape or crossed a ghost
};

/// Pure BSDF sampling, no light sampling, no Russian roulette. Vertices beyond max_depth
/// bounces are not scattered.
inline Contributions trace(const World& w, Vec3 o, Vec3 d, std::mt19937_64& rng, int max_depth,
                           double eps = 1e-4) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Contributions out;
  Rgb throughput(1.0);
  bool flagged = false;
  double t_min = 0.0;
  for (int bounce = 0;; ++bounce) {
    double best = deltapath::kInfinity;
    int idx = -1;
    for (std::size_t i = 0; i < w.shapes.size(); ++i) {
      const double t = hit_shape(w.shapes[i], o, d, t_min);
      if (t < best) {
        best = t;
        idx = static_cast<int>(i);
      }
    }
    for (const Shape& g : w.ghosts) {
      if (hit_shape(g, o, d, t_min) < best) flagged = true;
    }
    if (idx < 0) {
      const Rgb le = throughput * w.env.lookup(d);
      out.total += le;
      if (flagged) out.marked += le;
      return out;
    }
    const Shape& s = w.shapes[idx];
    if (w.marked[idx]) flagged = true;
    const Vec3 p = o + d * best;
    Vec3 n = s.is_sphere ? normalize(p - s.center) : normalize(cross(s.b - s.a, s.c - s.a));
    if (dot(n, d) < 0.0) {
      const Rgb le = throughput * s.emission;
      out.total += le;
      if (flagged) out.marked += le;
    }
    if (bounce >= max_depth) return out;
    if (dot(n, d) > 0.0) n = -n;
    if (s.mirror) {
      d = d - n * (2.0 * dot(d, n));
    } else {
      // Rejection-sampled cosine lobe: uniform point in the unit ball around n, normalised
      // (Lambert's construction).
      Vec3 v;
      double len2;
      do {
        v = Vec3{2.0 * uni(rng) - 1.0, 2.0 * uni(rng) - 1.0, 2.0 * uni(rng) - 1.0};
        len2 = dot(v, v);
      } while (len2 > 1.0 || len2 < 1e-12);
      v = v / std::sqrt(len2);
      d = normalize(n + v);
      if (!deltapath::is_finite(d) || dot(d, n) <= 0.0) return out;
    }
    throughput *= s.albedo;
    o = p;
    t_min = eps;
  }
}

/// Running mean / standard error of a scalar.
struct Accumulator {
  double n = 0.0, sum = 0.0, sum2 = 0.0;
  void add(double v) {
    n += 1.0;
    sum += v;
    sum2 += v * v;
  }
  double mean() const { return sum / n; }
  double variance() const { return n > 1.0 ? std::max(0.0, (sum2 - sum * sum / n) / (n - 1.0)) : 0.0; }
  double standard_error() const { return std::sqrt(variance() / n); }
};

}  // namespace oracle
