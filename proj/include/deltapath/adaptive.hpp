#pragma once

// Per-pixel sample allocation for the delta image.
//
//   weights   w_i = sigma_i + mean|L_delta,i|   (luminance)
//   blur      5x5 Gaussian, sigma 1, renormalised at the borders
//   normalise s_i = S * w_i / mean(w)
//   floor     s_i >= 1 / (pixels in its 2x2 block), remaining budget water-filled
//   dither    one uniform V per 2x2 block, systematic rounding of the block's running sum
//   boost     each sample is divided by min(1, s_i)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "deltapath/errors.hpp"
#include "deltapath/image.hpp"
#include "deltapath/rng.hpp"

namespace deltapath {

struct PixelStats {
  std::uint32_t count = 0;
  Rgb sum;
  double sum_luminance = 0.0;
  double sum_luminance_sq = 0.0;
  double sum_abs_luminance = 0.0;

  void add(const Rgb& delta) {
    const double l = delta.luminance();
    ++count;
    sum += delta;
    sum_luminance += l;
    sum_luminance_sq += l * l;
    sum_abs_luminance += std::abs(l);
  }

  Rgb mean() const { return count ? sum / static_cast<double>(count) : Rgb{}; }
  double variance() const {
    if (count == 0) return 0.0;
    const double m = sum_luminance / count;
    return std::max(0.0, sum_luminance_sq / count - m * m);
  }
  double mean_abs() const { return count ? sum_abs_luminance / count : 0.0; }
  /// Allocation weight of this pixel; zero when it has no samples.
  double weight() const { return std::sqrt(variance()) + mean_abs(); }
};

class StatsBuffer {
 public:
  StatsBuffer() = default;
  StatsBuffer(int width, int height)
      : width_(width), height_(height), pixels_(static_cast<std::size_t>(width) * height) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  PixelStats& at(int x, int y) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  const PixelStats& at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  PixelStats& operator[](std::size_t i) { return pixels_[i]; }
  const PixelStats& operator[](std::size_t i) const { return pixels_[i]; }

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<PixelStats> pixels_;
};

struct SampleMap {
  int width = 0;
  int height = 0;
  double target = 0.0;
  std::vector<double> s;

  double at(int x, int y) const { return s[static_cast<std::size_t>(y) * width + x]; }
  double mean() const {
    return s.empty() ? 0.0 : std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
  }
  Image to_image() const {
    Image img(width, height);
    for (std::size_t i = 0; i < s.size(); ++i) img[i] = Rgb(s[i]);
    return img;
  }
};

struct QuantizedSampleMap {
  int width = 0;
  int height = 0;
  std::vector<int> n;

  int at(int x, int y) const { return n[static_cast<std::size_t>(y) * width + x]; }
  long long total() const { return std::accumulate(n.begin(), n.end(), 0LL); }
};

struct MapOptions {
  bool blur = true;
  bool floor = true;
};

/// Pixels of the 2x2 block containing (x, y); 1, 2 or 4 at odd image edges.
inline int block_pixel_count(int width, int height, int x, int y) {
  const int bx = x & ~1, by = y & ~1;
  return std::min(2, width - bx) * std::min(2, height - by);
}

inline std::vector<double> gaussian_blur5(const std::vector<double>& in, int width, int height) {
  static constexpr double k[5] = {0.1353352832366127, 0.6065306597126334, 1.0, 0.6065306597126334,
                                  0.1353352832366127};  // exp(-d^2 / 2)
  std::vector<double> out(in.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double sum = 0.0, norm = 0.0;
      for (int dy = -2; dy <= 2; ++dy) {
        const int yy = y + dy;
        if (yy < 0 || yy >= height) continue;
        for (int dx = -2; dx <= 2; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= width) continue;
          const double w = k[dx + 2] * k[dy + 2];
          sum += w * in[static_cast<std::size_t>(yy) * width + xx];
          norm += w;
        }
      }
      out[static_cast<std::size_t>(y) * width + x] = sum / norm;
    }
  }
  return out;
}

/// Smallest allocation s_i = max(f_i, c * b_i) whose total is `total`. If the floors alone
/// exceed the budget the floors are returned.
inline std::vector<double> water_fill(const std::vector<double>& b, const std::vector<double>& f, double total) {
  const std::size_t n = b.size();
  const double floor_total = std::accumulate(f.begin(), f.end(), 0.0);
  if (floor_total >= total) return f;
  std::vector<double> ratio(n);
  for (std::size_t i = 0; i < n; ++i) ratio[i] = b[i] > 0.0 ? f[i] / b[i] : kInfinity;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) { return ratio[a] < ratio[c]; });
  // Pixels order[0..k) take c * b_i, the rest sit on their floor.
  double fixed = floor_total, free_weight = 0.0, c = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    if (!std::isfinite(ratio[i])) break;
    fixed -= f[i];
    free_weight += b[i];
    c = (total - fixed) / free_weight;
    const double next = k + 1 < n ? ratio[order[k + 1]] : kInfinity;
    if (c <= next) break;
  }
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = std::max(f[i], c * b[i]);
  // Pixels at c * b_i == f_i are counted once either way; fix rounding so the mean is exact.
  const double sum = std::accumulate(s.begin(), s.end(), 0.0);
  double over = sum - total;
  if (over != 0.0) {
    double adjustable = 0.0;
    for (std::size_t i = 0; i < n; ++i) adjustable += s[i] > f[i] ? s[i] - f[i] : 0.0;
    if (adjustable > 0.0) {
      for (std::size_t i = 0; i < n; ++i) {
        if (s[i] > f[i]) s[i] -= over * (s[i] - f[i]) / adjustable;
      }
    }
  }
  return s;
}

/// Builds the allocation for target mean `target` from the previous statistics.
inline SampleMap estimate_map(const StatsBuffer& stats, double target, const MapOptions& options = {}) {
  if (target < 0.0 || !std::isfinite(target)) throw ConfigError("sample budget must be finite and >= 0");
  const int w = stats.width(), h = stats.height();
  const std::size_t n = stats.size();
  SampleMap map{w, h, target, std::vector<double>(n, 0.0)};
  if (n == 0) return map;

  std::vector<double> weight(n);
  for (std::size_t i = 0; i < n; ++i) weight[i] = stats[i].weight();
  if (options.blur) weight = gaussian_blur5(weight, w, h);
  double mean = std::accumulate(weight.begin(), weight.end(), 0.0) / static_cast<double>(n);
  if (!(mean > 0.0) || !std::isfinite(mean)) {
    std::fill(weight.begin(), weight.end(), 1.0);
    mean = 1.0;
  }
  for (std::size_t i = 0; i < n; ++i) map.s[i] = target * weight[i] / mean;
  if (!options.floor) return map;

  std::vector<double> floors(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      floors[static_cast<std::size_t>(y) * w + x] = 1.0 / block_pixel_count(w, h, x, y);
    }
  }
  map.s = water_fill(map.s, floors, target * static_cast<double>(n));
  return map;
}

/// Uniform allocation (pilot passes and non-adaptive rendering).
inline SampleMap uniform_map(int width, int height, double target, bool floor = true) {
  SampleMap map{width, height, target, std::vector<double>(static_cast<std::size_t>(width) * height, target)};
  if (floor) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double& s = map.s[static_cast<std::size_t>(y) * width + x];
        s = std::max(s, 1.0 / block_pixel_count(width, height, x, y));
      }
    }
  }
  return map;
}

/// Pixels of a 2x2 block in dithering order.
inline int block_members(int width, int height, int bx, int by, std::size_t (&out)[4]) {
  int count = 0;
  for (int dy = 0; dy < 2; ++dy) {
    for (int dx = 0; dx < 2; ++dx) {
      const int x = bx * 2 + dx, y = by * 2 + dy;
      if (x < width && y < height) out[count++] = static_cast<std::size_t>(y) * width + x;
    }
  }
  return count;
}

/// Integer counts for one block given its shared uniform V in [0, 1). Pixel i receives the
/// number of integers in (C_{i-1} + V, C_i + V], where C is the running sum of s.
inline void dither_block(const SampleMap& map, const std::size_t* members, int count, double v,
                         std::vector<int>& out) {
  double running = 0.0;
  double previous = std::floor(v);
  for (int k = 0; k < count; ++k) {
    running += map.s[members[k]];
    const double current = std::floor(running + v);
    out[members[k]] = static_cast<int>(current - previous);
    previous = current;
  }
}

inline QuantizedSampleMap dither_quantize(const SampleMap& map, std::uint64_t seed, std::uint32_t frame = 0) {
  QuantizedSampleMap q{map.width, map.height, std::vector<int>(map.s.size(), 0)};
  for (double s : map.s) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw ContractViolation("sample map entries must be finite and >= 0");
  }
  const int bw = (map.width + 1) / 2, bh = (map.height + 1) / 2;
  for (int by = 0; by < bh; ++by) {
    for (int bx = 0; bx < bw; ++bx) {
      std::size_t members[4];
      const int count = block_members(map.width, map.height, bx, by, members);
      RandomStream stream(StreamKey{seed, StreamDomain::dither, static_cast<std::uint32_t>(bx),
                                    static_cast<std::uint32_t>(by), frame, 0});
      dither_block(map, members, count, stream.next_1d(), q.n);
    }
  }
  return q;
}

/// Divides a delta sample by min(1, s) to account for pixels skipped by the dither.
inline Rgb boost_compensate(const Rgb& delta, double s) {
  if (!(s > 0.0)) throw ContractViolation("boost needs a positive allocation");
  return delta / std::min(1.0, s);
}

/// Pixel estimate from the samples actually taken: boosted mean, zero if none were taken.
inline Rgb boosted_estimate(const Rgb& sample_sum, int taken, double s) {
  if (taken <= 0) return Rgb{};
  return boost_compensate(sample_sum / static_cast<double>(taken), s);
}

}  // namespace deltapath
