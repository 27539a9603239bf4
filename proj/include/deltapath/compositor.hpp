#pragma once

// Final-frame assembly:
//   masked    M * (Ls - L-) + L+
//   unmasked  Ls - L- + L+
// where M is 0 on pixels whose primary ray first hits dynamic geometry, Ls is the static
// image and L+ / L- are boosted per-pixel means of the delta samples.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "deltapath/adaptive.hpp"
#include "deltapath/errors.hpp"
#include "deltapath/image.hpp"
#include "deltapath/parallel.hpp"
#include "deltapath/scene.hpp"
#include "deltapath/static_field.hpp"

namespace deltapath {

struct GBufferPixel {
  std::optional<Intersection> first_hit;   // nearest hit in the dynamic scene
  std::optional<Intersection> static_hit;  // nearest static hit
  Vec3 direction;                          // primary ray direction
  std::uint8_t mask = 1;

  FieldQuery field_query() const { return {static_hit->position, direction, static_hit->normal}; }
};

struct GBuffer {
  int width = 0;
  int height = 0;
  std::vector<GBufferPixel> pixels;

  const GBufferPixel& at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t masked_out() const {
    std::size_t n = 0;
    for (const auto& p : pixels) n += p.mask == 0;
    return n;
  }
  Image mask_image() const {
    Image img(width, height);
    for (std::size_t i = 0; i < pixels.size(); ++i) img[i] = Rgb(pixels[i].mask);
    return img;
  }
};

/// One unjittered ray per pixel centre.
inline GBuffer build_gbuffer(const Scene& scene, int threads = 1) {
  const Camera& cam = scene.camera();
  GBuffer g{cam.width, cam.height, std::vector<GBufferPixel>(static_cast<std::size_t>(cam.width) * cam.height)};
  parallel_for(static_cast<std::size_t>(cam.height), threads, [&](std::size_t y) {
    for (int x = 0; x < cam.width; ++x) {
      const Ray ray = cam.primary_ray(x, static_cast<int>(y));
      GBufferPixel& p = g.pixels[y * cam.width + x];
      p.direction = ray.direction;
      p.first_hit = scene.intersect(ray, IntersectMode::include_dynamic);
      p.static_hit = scene.intersect(ray, IntersectMode::skip_dynamic);
      p.mask = p.first_hit && p.first_hit->is_dynamic ? 0 : 1;
    }
  });
  return g;
}

/// Static image from the oracle backend, traced along the primary rays of the static scene
/// so the query point is exactly the G-buffer's static hit. Misses see the static environment.
inline Image static_image(const Scene& scene, const GBuffer& g, const OracleField& oracle, std::uint32_t frame = 0,
                          int threads = 1) {
  Image img(g.width, g.height);
  parallel_for(static_cast<std::size_t>(g.height), threads, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < g.width; ++x) {
      const GBufferPixel& p = g.at(x, y);
      img.at(x, y) = p.static_hit ? oracle.trace(scene.camera().primary_ray(x, y), static_cast<std::uint32_t>(x),
                                                 static_cast<std::uint32_t>(y), frame)
                                  : scene.eval_environment(p.direction, LightState::static_state);
    }
  });
  return img;
}

/// Static image from the learned backend (one batched query).
inline Image static_image(const Scene& scene, const GBuffer& g, const LearnedField<float>& field) {
  Image img(g.width, g.height);
  std::vector<FieldQuery> queries;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < g.pixels.size(); ++i) {
    const GBufferPixel& p = g.pixels[i];
    if (p.static_hit) {
      queries.push_back(p.field_query());
      where.push_back(i);
    } else {
      img[i] = scene.eval_environment(p.direction, LightState::static_state);
    }
  }
  const auto values = field.query_batch(queries);
  for (std::size_t k = 0; k < where.size(); ++k) img[where[k]] = values[k];
  return img;
}

/// Per-pixel delta accumulators for one frame.
struct DeltaBuffers {
  int width = 0;
  int height = 0;
  Image plus_sum;   // sum of raw L+ samples
  Image minus_sum;  // sum of raw L- samples
  std::vector<int> taken;
  std::vector<double> allocation;  // pre-quantised s_i used for the boost

  DeltaBuffers() = default;
  DeltaBuffers(int w, int h)
      : width(w), height(h), plus_sum(w, h), minus_sum(w, h),
        taken(static_cast<std::size_t>(w) * h, 0), allocation(static_cast<std::size_t>(w) * h, 1.0) {}

  Rgb plus(std::size_t i) const { return boosted_estimate(plus_sum[i], taken[i], allocation[i]); }
  Rgb minus(std::size_t i) const { return boosted_estimate(minus_sum[i], taken[i], allocation[i]); }

  Image delta_image() const {
    Image img(width, height);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = plus(i) - minus(i);
    return img;
  }
  Image taken_image() const {
    Image img(width, height);
    for (std::size_t i = 0; i < img.size(); ++i) img[i] = Rgb(taken[i]);
    return img;
  }
};

/// Signed composite; clamp with clamp_negative only when writing output.
inline Image compose_hybrid(const Image& static_img, const DeltaBuffers& delta, const GBuffer& g, bool masked) {
  if (!static_img.same_size(delta.plus_sum) || static_img.width() != g.width || static_img.height() != g.height) {
    throw ConfigError("hybrid buffers have different resolutions");
  }
  Image out(static_img.width(), static_img.height());
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Select rather than multiply so a non-finite static value cannot reach M = 0 pixels.
    out[i] = masked && g.pixels[i].mask == 0 ? delta.plus(i) : static_img[i] - delta.minus(i) + delta.plus(i);
  }
  return out;
}

struct MetricsReport {
  double mse = 0.0;
  double rel_mse = 0.0;
  // Breakdown by mask value: "dynamic" pixels have M = 0, "static" pixels M = 1.
  double mse_dynamic = 0.0;
  double mse_static = 0.0;
  double rel_mse_dynamic = 0.0;
  double rel_mse_static = 0.0;
  std::size_t dynamic_pixels = 0;
  std::size_t static_pixels = 0;
  Image squared_error;  // per-pixel mean over channels
};

inline constexpr double kRelMseEpsilon = 0.01;

inline MetricsReport compute_metrics(const Image& image, const Image& reference, const GBuffer* g = nullptr) {
  if (!image.same_size(reference)) throw ConfigError("metric images have different resolutions");
  if (g && (g->width != image.width() || g->height != image.height())) {
    throw ConfigError("mask resolution does not match the image");
  }
  MetricsReport r;
  r.squared_error = Image(image.width(), image.height());
  double sums[2][2] = {{0, 0}, {0, 0}};  // [region][mse, rel]
  for (std::size_t i = 0; i < image.size(); ++i) {
    double se = 0.0, rel = 0.0;
    for (int c = 0; c < 3; ++c) {
      const double d = image[i][c] - reference[i][c];
      se += d * d;
      rel += d * d / (reference[i][c] * reference[i][c] + kRelMseEpsilon);
    }
    r.squared_error[i] = Rgb(se / 3.0);
    r.mse += se;
    r.rel_mse += rel;
    const int region = g ? g->pixels[i].mask : 1;
    sums[region][0] += se;
    sums[region][1] += rel;
    (region ? r.static_pixels : r.dynamic_pixels)++;
  }
  const auto per_channel = [](double sum, std::size_t pixels) { return pixels ? sum / (3.0 * pixels) : 0.0; };
  r.mse = per_channel(r.mse, image.size());
  r.rel_mse = per_channel(r.rel_mse, image.size());
  r.mse_dynamic = per_channel(sums[0][0], r.dynamic_pixels);
  r.rel_mse_dynamic = per_channel(sums[0][1], r.dynamic_pixels);
  r.mse_static = per_channel(sums[1][0], r.static_pixels);
  r.rel_mse_static = per_channel(sums[1][1], r.static_pixels);
  return r;
}

}  // namespace deltapath
