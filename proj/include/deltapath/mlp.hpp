#pragma once

// Fully connected ReLU network with a softplus output, evaluated on column batches
// (features x batch). Parameters live in one flat array, layer by layer: weights
// (out x in, column-major) followed by biases.

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "deltapath/errors.hpp"

namespace deltapath {

struct MlpConfig {
  int hidden_layers = 7;
  int width = 64;
  int outputs = 3;

  void validate() const {
    if (hidden_layers < 0 || hidden_layers > 64) throw ConfigError("MLP hidden layer count out of range");
    if (width < 1 || outputs < 1) throw ConfigError("MLP width and outputs must be positive");
  }
};

template <typename Real>
class Mlp {
 public:
  using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
  using ConstMap = Eigen::Map<const Matrix>;
  using MutMap = Eigen::Map<Matrix>;
  using ConstVecMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
  using MutVecMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>;

  struct Layer {
    int in = 0;
    int out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
  };

  /// Activations kept for the backward pass.
  struct Cache {
    std::vector<Matrix> inputs;  // input to each layer (post-activation of the previous one)
    Matrix pre_output;           // output layer before softplus
  };

  Mlp() = default;
  Mlp(int inputs, const MlpConfig& config) : inputs_(inputs), config_(config) {
    config_.validate();
    if (inputs < 1) throw ConfigError("MLP needs at least one input");
    std::size_t offset = 0;
    int in = inputs;
    for (int l = 0; l <= config_.hidden_layers; ++l) {
      const int out = l == config_.hidden_layers ? config_.outputs : config_.width;
      layers_.push_back({in, out, offset, offset + static_cast<std::size_t>(in) * out});
      offset += static_cast<std::size_t>(in) * out + out;
      in = out;
    }
    param_count_ = offset;
  }

  int inputs() const { return inputs_; }
  const MlpConfig& config() const { return config_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t param_count() const { return param_count_; }

  static Real softplus(Real z) { return z > Real(20) ? z : std::log1p(std::exp(z)); }
  static Real sigmoid(Real z) { return Real(1) / (Real(1) + std::exp(-z)); }

  /// x: inputs x batch. Returns outputs x batch.
  Matrix forward(const Real* params, const Matrix& x, Cache* cache = nullptr) const {
    Matrix h = x;
    if (cache) cache->inputs.clear();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& layer = layers_[l];
      if (cache) cache->inputs.push_back(h);
      const ConstMap w(params + layer.weight_offset, layer.out, layer.in);
      const ConstVecMap b(params + layer.bias_offset, layer.out);
      Matrix z = w * h;
      z.colwise() += b;
      if (l + 1 < layers_.size()) {
        h = z.cwiseMax(Real(0));
      } else {
        if (cache) cache->pre_output = z;
        h = z.unaryExpr([](Real v) { return softplus(v); });
      }
    }
    return h;
  }

  /// Accumulates parameter gradients into d_params. If d_x is non-null it receives
  /// d(loss)/d(inputs).
  void backward(const Real* params, const Cache& cache, const Matrix& d_output, Real* d_params,
                Matrix* d_x = nullptr) const {
    Matrix delta = d_output.cwiseProduct(cache.pre_output.unaryExpr([](Real v) { return sigmoid(v); }));
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
      const Layer& layer = layers_[l];
      const Matrix& input = cache.inputs[l];
      MutMap dw(d_params + layer.weight_offset, layer.out, layer.in);
      MutVecMap db(d_params + layer.bias_offset, layer.out);
      dw.noalias() += delta * input.transpose();
      db += delta.rowwise().sum();
      if (l == 0 && !d_x) break;
      const ConstMap w(params + layer.weight_offset, layer.out, layer.in);
      Matrix d_in = w.transpose() * delta;
      if (l == 0) {
        *d_x = std::move(d_in);
        break;
      }
      // The input of layer l is ReLU(pre-activation); its derivative is 1 where input > 0.
      delta = d_in.cwiseProduct(input.unaryExpr([](Real v) { return v > Real(0) ? Real(1) : Real(0); }));
    }
  }

 private:
  int inputs_ = 0;
  MlpConfig config_;
  std::vector<Layer> layers_;
  std::size_t param_count_ = 0;
};

}  // namespace deltapath
