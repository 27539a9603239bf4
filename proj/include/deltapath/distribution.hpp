#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "deltapath/errors.hpp"

namespace deltapath {

/// Piecewise-constant discrete distribution with an inverse-CDF sampler.
class Distribution1D {
 public:
  Distribution1D() = default;

  explicit Distribution1D(std::span<const double> weights) : weights_(weights.begin(), weights.end()) {
    cdf_.resize(weights_.size() + 1, 0.0);
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (!(weights_[i] >= 0.0)) throw ConfigError("distribution weights must be non-negative");
      cdf_[i + 1] = cdf_[i] + weights_[i];
    }
    total_ = cdf_.back();
    if (total_ > 0.0) {
      for (double& c : cdf_) c /= total_;
      cdf_.back() = 1.0;
    }
  }

  struct Sample {
    std::size_t index = 0;
    double probability = 0.0;
    double remapped = 0.0;  // u rescaled to [0,1) inside the chosen bin
  };

  bool empty() const { return !(total_ > 0.0); }
  std::size_t size() const { return weights_.size(); }
  double total() const { return total_; }
  const std::vector<double>& cdf() const { return cdf_; }

  double probability(std::size_t i) const { return empty() ? 0.0 : weights_[i] / total_; }

  /// Requires a non-empty distribution. Bins with zero weight are never returned.
  Sample sample(double u) const {
    if (empty()) throw ContractViolation("sampling an empty distribution");
    // First cdf entry strictly greater than u, minus one, is the bin.
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t i = static_cast<std::size_t>(std::distance(cdf_.begin(), it));
    i = i == 0 ? 0 : i - 1;
    i = std::min(i, weights_.size() - 1);
    while (weights_[i] == 0.0 && i > 0) --i;  // u landed on a flat cdf segment boundary
    while (weights_[i] == 0.0) ++i;
    const double width = cdf_[i + 1] - cdf_[i];
    double remapped = width > 0.0 ? (u - cdf_[i]) / width : 0.0;
    remapped = std::clamp(remapped, 0.0, 0x1.fffffffffffffp-1);
    return {i, weights_[i] / total_, remapped};
  }

 private:
  std::vector<double> weights_;
  std::vector<double> cdf_;
  double total_ = 0.0;
};

}  // namespace deltapath
