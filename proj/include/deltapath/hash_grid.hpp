#pragma once

// Multiresolution hash-grid encoding. Level l has resolution
//   N_l = floor(base * b^l),  b = exp(ln(finest / base) / (L - 1)),
// over the unit cube. A level with (N_l + 1)^3 <= T vertices is stored densely, otherwise
// vertices are hashed with (x * 1) ^ (y * 2654435761) ^ (z * 805459861) mod T.
// Features are trilinearly interpolated from the 8 cell corners.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "deltapath/errors.hpp"
#include "deltapath/math.hpp"

namespace deltapath {

struct HashGridConfig {
  int levels = 8;
  int log2_table_size = 14;
  int features = 2;
  int base_resolution = 4;
  int finest_resolution = 256;

  void validate() const {
    if (levels < 1 || levels > 32) throw ConfigError("hash grid levels must be in [1, 32]");
    if (log2_table_size < 1 || log2_table_size > 26) throw ConfigError("hash table size out of range");
    if (features < 1 || features > 16) throw ConfigError("hash grid features out of range");
    if (base_resolution < 1 || finest_resolution < base_resolution) {
      throw ConfigError("hash grid resolutions must satisfy finest >= base >= 1");
    }
  }
};

template <typename Real>
class HashGrid {
 public:
  struct Corners {
    std::array<std::uint32_t, 8> entry;  // table entry of each corner
    std::array<Real, 8> weight;
  };

  HashGrid() = default;
  explicit HashGrid(const HashGridConfig& config) : config_(config) {
    config_.validate();
    const double growth = config_.levels > 1
                              ? std::exp((std::log(static_cast<double>(config_.finest_resolution)) -
                                          std::log(static_cast<double>(config_.base_resolution))) /
                                         (config_.levels - 1))
                              : 1.0;
    const std::uint64_t table = std::uint64_t{1} << config_.log2_table_size;
    std::size_t offset = 0;
    for (int l = 0; l < config_.levels; ++l) {
      int res = static_cast<int>(std::floor(config_.base_resolution * std::pow(growth, l) + 1e-9));
      if (l == config_.levels - 1) res = config_.finest_resolution;
      const std::uint64_t vertices = static_cast<std::uint64_t>(res + 1) * (res + 1) * (res + 1);
      Level level;
      level.resolution = res;
      level.dense = vertices <= table;
      level.entries = static_cast<std::uint32_t>(level.dense ? vertices : table);
      level.offset = offset;
      offset += static_cast<std::size_t>(level.entries) * config_.features;
      levels_.push_back(level);
    }
    param_count_ = offset;
  }

  const HashGridConfig& config() const { return config_; }
  std::size_t param_count() const { return param_count_; }
  int output_dim() const { return config_.levels * config_.features; }
  int resolution(int level) const { return levels_[level].resolution; }
  bool dense(int level) const { return levels_[level].dense; }
  std::uint32_t entries(int level) const { return levels_[level].entries; }

  /// `p` must lie in the unit cube.
  Corners corners(int level, const Vec3& p) const {
    const Level& lv = levels_[level];
    Corners out;
    int base[3];
    Real frac[3];
    for (int a = 0; a < 3; ++a) {
      const double x = std::clamp(p[a], 0.0, 1.0) * lv.resolution;
      base[a] = std::min(static_cast<int>(x), lv.resolution - 1);
      frac[a] = static_cast<Real>(x - base[a]);
    }
    for (int c = 0; c < 8; ++c) {
      const std::uint32_t cx = base[0] + (c & 1);
      const std::uint32_t cy = base[1] + ((c >> 1) & 1);
      const std::uint32_t cz = base[2] + ((c >> 2) & 1);
      Real w = 1;
      w *= (c & 1) ? frac[0] : Real(1) - frac[0];
      w *= ((c >> 1) & 1) ? frac[1] : Real(1) - frac[1];
      w *= ((c >> 2) & 1) ? frac[2] : Real(1) - frac[2];
      out.weight[c] = w;
      if (lv.dense) {
        const std::uint32_t n = lv.resolution + 1;
        out.entry[c] = cx + n * (cy + n * cz);
      } else {
        out.entry[c] = (cx ^ (cy * 2654435761u) ^ (cz * 805459861u)) & (lv.entries - 1);
      }
    }
    return out;
  }

  /// Writes levels * features values to `out`.
  void encode(const Real* params, const Vec3& p, Real* out) const {
    const int f = config_.features;
    for (int l = 0; l < config_.levels; ++l) {
      const Corners c = corners(l, p);
      const Real* table = params + levels_[l].offset;
      for (int k = 0; k < f; ++k) out[l * f + k] = 0;
      for (int corner = 0; corner < 8; ++corner) {
        const Real* entry = table + static_cast<std::size_t>(c.entry[corner]) * f;
        for (int k = 0; k < f; ++k) out[l * f + k] += c.weight[corner] * entry[k];
      }
    }
  }

  /// Accumulates d(loss)/d(params) given d(loss)/d(encoding).
  void backward(const Vec3& p, const Real* d_out, Real* d_params) const {
    const int f = config_.features;
    for (int l = 0; l < config_.levels; ++l) {
      const Corners c = corners(l, p);
      Real* table = d_params + levels_[l].offset;
      for (int corner = 0; corner < 8; ++corner) {
        Real* entry = table + static_cast<std::size_t>(c.entry[corner]) * f;
        for (int k = 0; k < f; ++k) entry[k] += c.weight[corner] * d_out[l * f + k];
      }
    }
  }

 private:
  struct Level {
    int resolution = 1;
    bool dense = true;
    std::uint32_t entries = 0;
    std::size_t offset = 0;
  };

  HashGridConfig config_;
  std::vector<Level> levels_;
  std::size_t param_count_ = 0;
};

}  // namespace deltapath
