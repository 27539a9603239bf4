#pragma once

// Static-scene radiance field: outgoing radiance of the static scene at a surface point,
// seen from a given direction. Two backends:
//   oracle   path-traced estimate, unbiased
//   learned  hash grid + MLP trained offline on 1-spp path-traced targets
//
// Field file layout (little-endian):
//   char[4]  "DPSF"
//   u32      version (1)
//   u32 x5   levels, log2 table size, features, base resolution, finest resolution
//   f32 x6   bounds lower xyz, upper xyz (already padded)
//   u32 x2   hidden layers, width
//   u64      parameter count
//   f32[n]   parameters: hash tables level by level, then MLP layers (weights, biases)

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "deltapath/errors.hpp"
#include "deltapath/hash_grid.hpp"
#include "deltapath/integrators.hpp"
#include "deltapath/mlp.hpp"
#include "deltapath/parallel.hpp"
#include "deltapath/rng.hpp"
#include "deltapath/scene.hpp"

namespace deltapath {

struct FieldQuery {
  Vec3 position;
  Vec3 direction;  // unit, pointing from the viewer towards the surface
  Vec3 normal;     // unit
};

// ---------------------------------------------------------------------------------------
// Oracle backend

inline constexpr double kOracleBackoff = 1e-3;

/// One path-traced sample of the static scene along the view ray ending at the query point.
inline Rgb oracle_sample(const Scene& scene, const FieldQuery& q, RandomStream& stream,
                         const IntegratorSettings& settings) {
  const Ray ray{q.position - q.direction * kOracleBackoff, q.direction};
  return trace_reference(scene, SceneVariant::static_scene, ray, stream, settings);
}

class OracleField {
 public:
  OracleField(const Scene& scene, int samples, std::uint64_t seed)
      : scene_(&scene), samples_(samples), seed_(seed), settings_(IntegratorSettings::from_scene(scene)) {
    if (samples < 1) throw ConfigError("oracle field needs at least one sample");
  }

  int samples() const { return samples_; }

  /// (px, py, frame) select the stream family; sample k uses sample index k.
  Rgb query(const FieldQuery& q, std::uint32_t px = 0, std::uint32_t py = 0, std::uint32_t frame = 0) const {
    return trace({q.position - q.direction * kOracleBackoff, q.direction}, px, py, frame);
  }

  /// Same estimate along an arbitrary ray whose first static hit is the query point. Camera
  /// rays give exactly the hit the G-buffer saw, which matters on edges shared by two faces.
  Rgb trace(const Ray& ray, std::uint32_t px = 0, std::uint32_t py = 0, std::uint32_t frame = 0) const {
    Rgb sum;
    for (int k = 0; k < samples_; ++k) {
      RandomStream stream(StreamKey{seed_, StreamDomain::oracle, px, py, frame, static_cast<std::uint32_t>(k)});
      sum += trace_reference(*scene_, SceneVariant::static_scene, ray, stream, settings_);
    }
    return sum / static_cast<double>(samples_);
  }

 private:
  const Scene* scene_;
  int samples_;
  std::uint64_t seed_;
  IntegratorSettings settings_;
};

// ---------------------------------------------------------------------------------------
// Training data

struct TrainSample {
  std::array<float, 3> position;
  std::array<float, 3> direction;
  std::array<float, 3> normal;
  std::array<float, 3> target;
  float weight = 1.0f;
};

inline std::array<float, 3> to_float3(const Vec3& v) {
  return {static_cast<float>(v.x), static_cast<float>(v.y), static_cast<float>(v.z)};
}
inline Vec3 to_vec3(const std::array<float, 3>& v) { return {v[0], v[1], v[2]}; }

/// Sample `index` of the dataset: an area-weighted point on a static surface, a
/// cosine-weighted outgoing direction on a random side (outside for spheres), and a 1-spp
/// static path-traced target. A pure function of (seed, index).
inline TrainSample make_train_sample(const Scene& scene, std::uint64_t seed, std::uint32_t index,
                                     const IntegratorSettings& settings) {
  RandomStream setup(StreamKey{seed, StreamDomain::dataset, 0, 0, 0, index});
  const auto pick = scene.static_area_distribution().sample(setup.next_1d());
  const auto [u0, u1] = setup.next_2d();
  auto [position, normal] = scene.sample_surface(static_cast<std::uint32_t>(pick.index), u0, u1);
  const bool is_sphere = scene.primitives()[pick.index].is_sphere;
  if (!is_sphere && setup.next_1d() < 0.5) normal = -normal;
  const auto [d0, d1] = setup.next_2d();
  const Vec3 outgoing = Frame::from_normal(normal).to_world(cosine_hemisphere(d0, d1));

  const FieldQuery q{position, -outgoing, normal};
  RandomStream trace_stream(StreamKey{seed, StreamDomain::dataset, 1, 0, 0, index});
  const Rgb target = oracle_sample(scene, q, trace_stream, settings);

  TrainSample s;
  s.position = to_float3(q.position);
  s.direction = to_float3(q.direction);
  s.normal = to_float3(q.normal);
  s.target = to_float3({target.r, target.g, target.b});
  s.weight = target.is_finite() ? 1.0f : 0.0f;
  if (s.weight == 0.0f) s.target = {0.0f, 0.0f, 0.0f};
  return s;
}

inline std::vector<TrainSample> generate_dataset(const Scene& scene, std::size_t count, std::uint64_t seed,
                                                 int threads = 1) {
  if (scene.static_area_distribution().empty()) throw ConfigError("scene has no static surfaces");
  const IntegratorSettings settings = IntegratorSettings::from_scene(scene);
  std::vector<TrainSample> data(count);
  parallel_for(count, threads, [&](std::size_t i) {
    data[i] = make_train_sample(scene, seed, static_cast<std::uint32_t>(i), settings);
  }, 4096);
  return data;
}

// ---------------------------------------------------------------------------------------
// Learned backend

template <typename Real = float>
class LearnedField {
 public:
  using Matrix = typename Mlp<Real>::Matrix;
  static constexpr int kDirectionInputs = 6;  // view direction and normal

  LearnedField() = default;

  /// `bounds` is the static scene's bounding box; it is padded here.
  LearnedField(const HashGridConfig& grid, const MlpConfig& mlp, const Aabb& bounds, std::uint64_t seed)
      : grid_(grid), mlp_(grid_.output_dim() + kDirectionInputs, mlp) {
    if (!bounds.valid()) throw ConfigError("field bounds are empty");
    const Vec3 extent = bounds.extent();
    const double pad = 0.01 * std::max({extent.x, extent.y, extent.z}) + 1e-3;
    bounds_.lower = bounds.lower - Vec3{pad, pad, pad};
    bounds_.upper = bounds.upper + Vec3{pad, pad, pad};
    initialise(seed);
  }

  /// Rebuilds a field from stored parts (used by the file reader).
  LearnedField(const HashGridConfig& grid, const MlpConfig& mlp, const Aabb& padded_bounds, std::vector<Real> params)
      : grid_(grid), mlp_(grid_.output_dim() + kDirectionInputs, mlp), bounds_(padded_bounds), params_(std::move(params)) {
    if (params_.size() != param_count()) throw IoError("field parameter count does not match its configuration");
  }

  const HashGrid<Real>& grid() const { return grid_; }
  const Mlp<Real>& mlp() const { return mlp_; }
  const Aabb& bounds() const { return bounds_; }
  std::size_t param_count() const { return grid_.param_count() + mlp_.param_count(); }
  std::vector<Real>& params() { return params_; }
  const std::vector<Real>& params() const { return params_; }
  const Real* mlp_params() const { return params_.data() + grid_.param_count(); }
  std::uint64_t out_of_bounds_queries() const { return out_of_bounds_.load(); }

  /// Position mapped to the unit cube; outside positions are clamped and logged.
  Vec3 unit_position(const Vec3& p) const {
    const Vec3 e = bounds_.extent();
    Vec3 u{(p.x - bounds_.lower.x) / e.x, (p.y - bounds_.lower.y) / e.y, (p.z - bounds_.lower.z) / e.z};
    bool outside = false;
    for (int a = 0; a < 3; ++a) {
      if (!(u[a] >= 0.0 && u[a] <= 1.0)) {
        outside = true;
        u[a] = std::clamp(std::isfinite(u[a]) ? u[a] : 0.0, 0.0, 1.0);
      }
    }
    if (outside && out_of_bounds_.fetch_add(1) == 0) {
      spdlog::warn("static field queried outside its bounds at ({}, {}, {}); position clamped", p.x, p.y, p.z);
    }
    return u;
  }

  /// Network inputs for a batch: one column per query.
  Matrix inputs(std::span<const FieldQuery> queries, std::vector<Vec3>* unit_positions = nullptr) const {
    const int enc = grid_.output_dim();
    Matrix x(enc + kDirectionInputs, static_cast<Eigen::Index>(queries.size()));
    if (unit_positions) unit_positions->resize(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const Vec3 u = unit_position(queries[i].position);
      if (unit_positions) (*unit_positions)[i] = u;
      Real* col = x.data() + i * x.rows();
      grid_.encode(params_.data(), u, col);
      for (int a = 0; a < 3; ++a) {
        col[enc + a] = static_cast<Real>(queries[i].direction[a]);
        col[enc + 3 + a] = static_cast<Real>(queries[i].normal[a]);
      }
    }
    return x;
  }

  std::vector<Rgb> query_batch(std::span<const FieldQuery> queries) const {
    std::vector<Rgb> out(queries.size());
    constexpr std::size_t kChunk = 4096;
    for (std::size_t begin = 0; begin < queries.size(); begin += kChunk) {
      const auto part = queries.subspan(begin, std::min(kChunk, queries.size() - begin));
      const Matrix y = mlp_.forward(mlp_params(), inputs(part));
      for (std::size_t i = 0; i < part.size(); ++i) {
        out[begin + i] = Rgb(y(0, i), y(1, i), y(2, i));
      }
    }
    return out;
  }

  Rgb query(const FieldQuery& q) const { return query_batch(std::span<const FieldQuery>(&q, 1))[0]; }

  /// Mean relative squared error of the batch and its gradient (accumulated into `grad`,
  /// which must be zeroed by the caller). The denominator uses the prediction without
  /// letting gradients flow through it.
  double loss_and_gradient(std::span<const FieldQuery> queries, std::span<const Rgb> targets,
                           std::span<const double> weights, double epsilon, Real* grad) const {
    std::vector<Vec3> units;
    const Matrix x = inputs(queries, &units);
    typename Mlp<Real>::Cache cache;
    const Matrix y = mlp_.forward(mlp_params(), x, &cache);
    const auto n = static_cast<Eigen::Index>(queries.size());
    Matrix d_y(3, n);
    double loss = 0.0;
    const double norm = 1.0 / (3.0 * static_cast<double>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) {
        const double pred = y(c, i);
        const double denom = pred * pred + epsilon;
        const double diff = pred - targets[i][c];
        loss += weights[i] * diff * diff / denom * norm;
        d_y(c, i) = static_cast<Real>(weights[i] * 2.0 * diff / denom * norm);
      }
    }
    Matrix d_x;
    mlp_.backward(mlp_params(), cache, d_y, grad + grid_.param_count(), &d_x);
    for (Eigen::Index i = 0; i < n; ++i) grid_.backward(units[i], d_x.data() + i * d_x.rows(), grad);
    return loss;
  }

 private:
  void initialise(std::uint64_t seed) {
    params_.assign(param_count(), Real(0));
    RandomStream stream(StreamKey{seed, StreamDomain::training, 0xFFFFFFFFu, 0, 0, 0});
    std::uint32_t counter = 0;
    const auto uniform = [&](double scale) {
      if (stream.dimension() >= RandomStream::kMaxDimensions) {
        stream = RandomStream(StreamKey{seed, StreamDomain::training, 0xFFFFFFFFu, 0, 0, ++counter});
      }
      return static_cast<Real>(scale * (2.0 * stream.next_1d() - 1.0));
    };
    for (std::size_t i = 0; i < grid_.param_count(); ++i) params_[i] = uniform(1e-4);
    Real* mlp = params_.data() + grid_.param_count();
    for (const auto& layer : mlp_.layers()) {
      const double bound = std::sqrt(6.0 / layer.in);  // He-uniform for ReLU layers
      for (std::size_t k = 0; k < static_cast<std::size_t>(layer.in) * layer.out; ++k) {
        mlp[layer.weight_offset + k] = uniform(bound);
      }
    }
  }

  HashGrid<Real> grid_;
  Mlp<Real> mlp_;
  Aabb bounds_;
  std::vector<Real> params_;
  mutable std::atomic<std::uint64_t> out_of_bounds_{0};

 public:
  LearnedField(const LearnedField& o)
      : grid_(o.grid_), mlp_(o.mlp_), bounds_(o.bounds_), params_(o.params_), out_of_bounds_(0) {}
  LearnedField& operator=(const LearnedField& o) {
    grid_ = o.grid_;
    mlp_ = o.mlp_;
    bounds_ = o.bounds_;
    params_ = o.params_;
    return *this;
  }
};

inline std::vector<FieldQuery> queries_of(std::span<const TrainSample> samples) {
  std::vector<FieldQuery> q(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    q[i] = {to_vec3(samples[i].position), to_vec3(samples[i].direction), to_vec3(samples[i].normal)};
  }
  return q;
}

// ---------------------------------------------------------------------------------------
// Training

struct TrainingConfig {
  int epochs = 2;
  int batch_size = 1024;
  double learning_rate = 1e-2;
  double decay = 0.5;  // learning rate multiplier per epoch
  double beta1 = 0.9;
  double beta2 = 0.99;
  double adam_epsilon = 1e-10;
  double loss_epsilon = 0.01;
  double divergence_factor = 10.0;
  int divergence_patience = 3;
  std::uint64_t seed = 1;
};

struct TrainingReport {
  double initial_loss = 0.0;
  std::vector<double> epoch_losses;
  double final_loss = 0.0;
};

template <typename Real>
TrainingReport train_field(LearnedField<Real>& field, std::span<const TrainSample> data, const TrainingConfig& config,
                           const std::function<void(int, double)>& on_epoch = {}) {
  if (data.empty()) throw ContractViolation("training needs a non-empty dataset");
  if (config.epochs < 0 || config.batch_size < 1) throw ConfigError("invalid training configuration");
  std::vector<Real>& params = field.params();
  const std::size_t n_params = params.size();
  std::vector<Real> grad(n_params), m(n_params, Real(0)), v(n_params, Real(0));

  std::vector<std::uint32_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::uint32_t>(i);

  const std::size_t batch = std::min<std::size_t>(config.batch_size, data.size());
  std::vector<FieldQuery> queries(batch);
  std::vector<Rgb> targets(batch);
  std::vector<double> weights(batch);
  const auto load_batch = [&](std::size_t begin, std::size_t count) {
    for (std::size_t k = 0; k < count; ++k) {
      const TrainSample& s = data[order[begin + k]];
      queries[k] = {to_vec3(s.position), to_vec3(s.direction), to_vec3(s.normal)};
      targets[k] = Rgb(s.target[0], s.target[1], s.target[2]);
      weights[k] = s.weight;
    }
  };

  TrainingReport report;
  {
    load_batch(0, batch);
    std::fill(grad.begin(), grad.end(), Real(0));
    report.initial_loss = field.loss_and_gradient({queries.data(), batch}, {targets.data(), batch},
                                                  {weights.data(), batch}, config.loss_epsilon, grad.data());
  }

  std::uint64_t step = 0;
  int bad_epochs = 0;
  double lr = config.learning_rate;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates shuffle from the counter-based stream; deterministic per (seed, epoch).
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const double u = RandomStream::at(StreamKey{config.seed, StreamDomain::training, static_cast<std::uint32_t>(epoch), 0, 0,
                                                  static_cast<std::uint32_t>(i)}.prefix(), 0);
      const std::size_t j = static_cast<std::size_t>(u * static_cast<double>(i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin + batch <= order.size(); begin += batch) {
      load_batch(begin, batch);
      std::fill(grad.begin(), grad.end(), Real(0));
      const double loss = field.loss_and_gradient({queries.data(), batch}, {targets.data(), batch},
                                                  {weights.data(), batch}, config.loss_epsilon, grad.data());
      if (!std::isfinite(loss)) {
        throw TrainingDiverged("training loss became non-finite in epoch " + std::to_string(epoch));
      }
      epoch_loss += loss;
      ++batches;
      ++step;
      const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
      const Real b1 = static_cast<Real>(config.beta1), b2 = static_cast<Real>(config.beta2);
      const Real step_size = static_cast<Real>(lr / c1);
      const Real inv_c2 = static_cast<Real>(1.0 / c2);
      const Real eps = static_cast<Real>(config.adam_epsilon);
      for (std::size_t p = 0; p < n_params; ++p) {
        const Real g = grad[p];
        m[p] = b1 * m[p] + (Real(1) - b1) * g;
        v[p] = b2 * v[p] + (Real(1) - b2) * g * g;
        params[p] -= step_size * m[p] / (std::sqrt(v[p] * inv_c2) + eps);
      }
    }
    epoch_loss /= static_cast<double>(std::max<std::size_t>(batches, 1));
    report.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
    if (epoch_loss > config.divergence_factor * report.initial_loss) {
      if (++bad_epochs >= config.divergence_patience) {
        throw TrainingDiverged("training loss exceeded " + std::to_string(config.divergence_factor) +
                               "x its initial value for " + std::to_string(bad_epochs) + " consecutive epochs");
      }
    } else {
      bad_epochs = 0;
    }
    lr *= config.decay;
  }
  report.final_loss = report.epoch_losses.empty() ? report.initial_loss : report.epoch_losses.back();
  return report;
}

// ---------------------------------------------------------------------------------------
// Field files

namespace field_io_detail {

template <typename T>
void put(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = sizeof(T); i-- > 0;) out.push_back(bytes[i]);
  } else {
    out.append(reinterpret_cast<const char*>(&value), sizeof(T));
  }
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw IoError("field file is truncated");
  T value;
  if constexpr (std::endian::native == std::endian::big) {
    char bytes[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = in[pos + sizeof(T) - 1 - i];
    std::memcpy(&value, bytes, sizeof(T));
  } else {
    std::memcpy(&value, in.data() + pos, sizeof(T));
  }
  pos += sizeof(T);
  return value;
}

}  // namespace field_io_detail

inline constexpr std::uint32_t kFieldFileVersion = 1;

inline std::string encode_field(const LearnedField<float>& field) {
  using field_io_detail::put;
  std::string out = "DPSF";
  put<std::uint32_t>(out, kFieldFileVersion);
  const HashGridConfig& g = field.grid().config();
  for (int v : {g.levels, g.log2_table_size, g.features, g.base_resolution, g.finest_resolution}) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  for (const Vec3& corner : {field.bounds().lower, field.bounds().upper}) {
    for (int a = 0; a < 3; ++a) put<float>(out, static_cast<float>(corner[a]));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(field.mlp().config().hidden_layers));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(field.mlp().config().width));
  put<std::uint64_t>(out, field.params().size());
  for (float p : field.params()) put<float>(out, p);
  return out;
}

inline LearnedField<float> decode_field(const std::string& bytes) {
  using field_io_detail::get;
  if (bytes.size() < 4 || bytes.compare(0, 4, "DPSF") != 0) throw IoError("not a static field file (bad magic)");
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(bytes, pos);
  if (version != kFieldFileVersion) throw IoError("unsupported field file version " + std::to_string(version));
  HashGridConfig g;
  g.levels = static_cast<int>(get<std::uint32_t>(bytes, pos));
  g.log2_table_size = static_cast<int>(get<std::uint32_t>(bytes, pos));
  g.features = static_cast<int>(get<std::uint32_t>(bytes, pos));
  g.base_resolution = static_cast<int>(get<std::uint32_t>(bytes, pos));
  g.finest_resolution = static_cast<int>(get<std::uint32_t>(bytes, pos));
  Aabb bounds;
  for (Vec3* corner : {&bounds.lower, &bounds.upper}) {
    for (int a = 0; a < 3; ++a) (*corner)[a] = get<float>(bytes, pos);
  }
  MlpConfig m;
  m.hidden_layers = static_cast<int>(get<std::uint32_t>(bytes, pos));
  m.width = static_cast<int>(get<std::uint32_t>(bytes, pos));
  const auto count = get<std::uint64_t>(bytes, pos);
  if (count > (bytes.size() - pos) / 4) throw IoError("field file is truncated");
  std::vector<float> params(count);
  for (float& p : params) p = get<float>(bytes, pos);
  try {
    return LearnedField<float>(g, m, bounds, std::move(params));
  } catch (const ConfigError& e) {
    throw IoError(std::string("field file has an invalid configuration: ") + e.what());
  }
}

inline void save_field(const std::string& path, const LearnedField<float>& field) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write field file '" + path + "'");
  const std::string bytes = encode_field(field);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing field file '" + path + "'");
}

inline LearnedField<float> load_field(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open field file '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_field(bytes);
}

}  // namespace deltapath
