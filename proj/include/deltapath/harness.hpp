#pragma once

// Rendering drivers shared by the command-line tool, the acceptance binary and the tests.
// Every image is a pure function of (scene, settings, seed); rows are rendered in parallel
// but each pixel only reads its own keyed random streams.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <spdlog/spdlog.h>

#include "deltapath/adaptive.hpp"
#include "deltapath/compositor.hpp"
#include "deltapath/errors.hpp"
#include "deltapath/image.hpp"
#include "deltapath/integrators.hpp"
#include "deltapath/parallel.hpp"
#include "deltapath/scene.hpp"
#include "deltapath/scene_io.hpp"
#include "deltapath/static_field.hpp"

namespace deltapath {

enum class IntegratorKind { reference_static, reference_dynamic, additive, subtractive, delta_pss, hybrid };

inline constexpr std::pair<IntegratorKind, std::string_view> kIntegratorNames[] = {
    {IntegratorKind::reference_static, "reference-static"},
    {IntegratorKind::reference_dynamic, "reference-dynamic"},
    {IntegratorKind::additive, "additive"},
    {IntegratorKind::subtractive, "subtractive"},
    {IntegratorKind::delta_pss, "delta-pss"},
    {IntegratorKind::hybrid, "hybrid"},
};

inline std::optional<IntegratorKind> parse_integrator(std::string_view name) {
  for (const auto& [kind, n] : kIntegratorNames) {
    if (n == name) return kind;
  }
  return std::nullopt;
}

inline std::string_view integrator_name(IntegratorKind kind) {
  for (const auto& [k, n] : kIntegratorNames) {
    if (k == kind) return n;
  }
  return "unknown";
}

/// Traversals per sample: delta samples trace both scenes.
inline double cost_per_sample(IntegratorKind kind) {
  return kind == IntegratorKind::delta_pss || kind == IntegratorKind::hybrid ? 2.0 : 1.0;
}

/// Counts non-finite samples; they are dropped and the first one is logged.
class SampleGuard {
 public:
  bool accept(const Rgb& v) {
    if (v.is_finite()) return true;
    if (rejected_.fetch_add(1) == 0) spdlog::warn("non-finite radiance sample rejected");
    return false;
  }
  std::uint64_t rejected() const { return rejected_.load(); }

 private:
  std::atomic<std::uint64_t> rejected_{0};
};

/// Plain per-pixel Monte Carlo image for the single-scene integrators.
inline Image render_path_image(const Scene& scene, IntegratorKind kind, int spp, std::uint64_t seed,
                               std::uint32_t frame = 0, int threads = 1, SampleGuard* guard = nullptr) {
  if (spp < 1) throw ConfigError("samples per pixel must be >= 1");
  const Camera& cam = scene.camera();
  const IntegratorSettings settings = IntegratorSettings::from_scene(scene);
  SampleGuard local;
  SampleGuard& g = guard ? *guard : local;
  Image img(cam.width, cam.height);
  parallel_for(static_cast<std::size_t>(cam.height), threads, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < cam.width; ++x) {
      const Ray ray = cam.primary_ray(x, y);
      Rgb sum;
      int accepted = 0;
      for (int s = 0; s < spp; ++s) {
        const StreamKey key{seed,
                            kind == IntegratorKind::delta_pss ? StreamDomain::delta : StreamDomain::reference,
                            static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y), frame,
                            static_cast<std::uint32_t>(s)};
        RandomStream stream(key);
        Rgb v;
        switch (kind) {
          case IntegratorKind::reference_static:
            v = trace_reference(scene, SceneVariant::static_scene, ray, stream, settings);
            break;
          case IntegratorKind::reference_dynamic:
            v = trace_reference(scene, SceneVariant::dynamic_scene, ray, stream, settings);
            break;
          case IntegratorKind::additive:
            v = trace_additive(scene, ray, stream, settings);
            break;
          case IntegratorKind::subtractive:
            v = trace_subtractive(scene, ray, stream, settings);
            break;
          case IntegratorKind::delta_pss:
            v = trace_delta_pss(scene, ray, stream, settings).delta;
            break;
          case IntegratorKind::hybrid:
            throw ContractViolation("hybrid frames are rendered with render_hybrid");
        }
        if (!g.accept(v)) continue;
        sum += v;
        ++accepted;
      }
      img.at(x, y) = accepted ? sum / static_cast<double>(accepted) : Rgb{};
    }
  });
  return img;
}

/// Delta samples for one frame according to integer counts. Statistics of the raw L_delta
/// samples are written to `stats` when given.
inline DeltaBuffers render_delta(const Scene& scene, const SampleMap& map, const QuantizedSampleMap& counts,
                                 std::uint64_t seed, std::uint32_t frame, int threads, StatsBuffer* stats = nullptr,
                                 StreamDomain domain = StreamDomain::delta, SampleGuard* guard = nullptr) {
  const Camera& cam = scene.camera();
  if (map.width != cam.width || map.height != cam.height || counts.width != cam.width ||
      counts.height != cam.height) {
    throw ConfigError("sample map resolution does not match the camera");
  }
  const IntegratorSettings settings = IntegratorSettings::from_scene(scene);
  SampleGuard local;
  SampleGuard& g = guard ? *guard : local;
  DeltaBuffers buffers(cam.width, cam.height);
  buffers.allocation = map.s;
  if (stats) *stats = StatsBuffer(cam.width, cam.height);
  parallel_for(static_cast<std::size_t>(cam.height), threads, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * cam.width + x;
      const Ray ray = cam.primary_ray(x, y);
      for (int k = 0; k < counts.n[i]; ++k) {
        const RandomStream stream(StreamKey{seed, domain, static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                                            frame, static_cast<std::uint32_t>(k)});
        const DeltaSample d = trace_delta_pss(scene, ray, stream, settings);
        if (!g.accept(d.plus) || !g.accept(d.minus) || !g.accept(d.delta)) continue;
        buffers.plus_sum[i] += d.plus;
        buffers.minus_sum[i] += d.minus;
        ++buffers.taken[i];
        if (stats) (*stats)[i].add(d.delta);
      }
    }
  });
  return buffers;
}

struct HybridOptions {
  double spp = 1.0;  // target mean delta samples per pixel
  bool adaptive = false;
  bool masked = true;
  std::uint64_t seed = 1;
  std::uint32_t frame = 0;
  int threads = 1;
  MapOptions map_options;
};

struct HybridFrame {
  Image image;  // signed; clamp on output
  DeltaBuffers delta;
  SampleMap map;
  QuantizedSampleMap counts;
  StatsBuffer stats;  // statistics of this frame's delta samples
  std::uint64_t rejected = 0;
};

inline constexpr std::uint32_t kPilotFrameBit = 0x80000000u;

/// One hybrid frame. With adaptive sampling the allocation comes from `previous` (the last
/// frame's statistics); without them a pilot pass of a quarter of the budget is taken first
/// and charged against the frame's budget. Pilot samples only feed the statistics.
inline HybridFrame render_hybrid(const Scene& scene, const GBuffer& gbuffer, const Image& static_img,
                                 const HybridOptions& options, const StatsBuffer* previous = nullptr) {
  if (options.spp < 0.0) throw ConfigError("delta samples per pixel must be >= 0");
  const Camera& cam = scene.camera();
  SampleGuard guard;
  HybridFrame frame;
  double budget = options.spp;
  if (options.adaptive) {
    if (previous && previous->width() == cam.width && previous->height() == cam.height) {
      frame.map = estimate_map(*previous, budget, options.map_options);
    } else {
      const SampleMap pilot = uniform_map(cam.width, cam.height, budget / 4.0);
      const auto pilot_counts = dither_quantize(pilot, options.seed, options.frame | kPilotFrameBit);
      StatsBuffer pilot_stats;
      render_delta(scene, pilot, pilot_counts, options.seed, options.frame, options.threads, &pilot_stats,
                   StreamDomain::pilot, &guard);
      budget = std::max(0.0, budget - pilot.mean());
      frame.map = estimate_map(pilot_stats, budget, options.map_options);
    }
  } else {
    frame.map = uniform_map(cam.width, cam.height, budget, options.map_options.floor);
  }
  frame.counts = dither_quantize(frame.map, options.seed, options.frame);
  frame.delta = render_delta(scene, frame.map, frame.counts, options.seed, options.frame, options.threads,
                             &frame.stats, StreamDomain::delta, &guard);
  frame.image = compose_hybrid(static_img, frame.delta, gbuffer, options.masked);
  frame.rejected = guard.rejected();
  return frame;
}

// ---------------------------------------------------------------------------------------
// Static image sources

struct OracleBackend {
  int spp = 256;
  std::uint64_t seed = 0x5747u;
};
struct LearnedBackend {
  std::string path;
};
using StaticBackend = std::variant<OracleBackend, LearnedBackend>;

inline Image build_static_image(const Scene& scene, const GBuffer& g, const StaticBackend& backend, int threads = 1) {
  if (const auto* o = std::get_if<OracleBackend>(&backend)) {
    return static_image(scene, g, OracleField(scene, o->spp, o->seed), 0, threads);
  }
  const LearnedField<float> field = load_field(std::get<LearnedBackend>(backend).path);
  return static_image(scene, g, field);
}

// ---------------------------------------------------------------------------------------
// Render command

struct RenderConfig {
  std::string scene;
  std::optional<Vec3> camera_position;
  std::optional<Vec3> camera_look_at;
  std::optional<double> fov;
  std::optional<int> width;
  std::optional<int> height;
  IntegratorKind integrator = IntegratorKind::hybrid;
  double spp = 1.0;
  std::uint64_t seed = 1;
  std::uint32_t frame = 0;
  int frames = 1;
  Vec3 velocity;  // dynamic-object translation per frame
  StaticBackend backend = OracleBackend{};
  bool masked = true;
  bool adaptive = false;
  bool dump_buffers = false;
  bool dump_sample_map = false;
  int threads = 1;
  std::string output = "out.pfm";

  /// Argument-level checks; scene contents are validated when the scene is built.
  void validate() const {
    if (scene.empty()) throw ConfigError("no scene given");
    if ((width && *width < 8) || (height && *height < 8)) throw ConfigError("resolution must be at least 8x8");
    if (fov && !(*fov > 0.0 && *fov < 180.0)) throw ConfigError("fov must be in (0, 180)");
    if (!std::isfinite(spp)) throw ConfigError("spp must be finite");
    if (integrator == IntegratorKind::hybrid ? spp < 0.0 : spp < 1.0) {
      throw ConfigError("spp must be >= 1 (>= 0 for hybrid)");
    }
    if (integrator != IntegratorKind::hybrid && spp != std::floor(spp)) {
      throw ConfigError("spp must be an integer for this integrator");
    }
    if (frames < 1) throw ConfigError("frames must be >= 1");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (const auto* o = std::get_if<OracleBackend>(&backend); o && o->spp < 1) {
      throw ConfigError("oracle spp must be >= 1");
    }
  }

  void apply_camera(SceneDescription& desc) const {
    if (camera_position) desc.camera.position = *camera_position;
    if (camera_look_at) desc.camera.look_at = *camera_look_at;
    if (fov) desc.camera.vfov_degrees = *fov;
    if (width) desc.camera.width = *width;
    if (height) desc.camera.height = *height;
    if (desc.camera.width < 8 || desc.camera.height < 8) throw ConfigError("resolution must be at least 8x8");
  }
};

struct RenderFrameResult {
  std::uint32_t frame = 0;
  Image image;  // signed
  std::map<std::string, Image> buffers;
  std::uint64_t delta_samples = 0;
  std::uint64_t rejected = 0;
};

struct RenderResult {
  std::vector<RenderFrameResult> frames;
};

/// Renders all frames of `config` for an already-parsed scene description.
inline RenderResult render(const RenderConfig& config, const SceneDescription& base) {
  config.validate();
  RenderResult result;
  std::optional<Image> static_img;
  std::optional<StatsBuffer> stats;
  for (int f = 0; f < config.frames; ++f) {
    SceneDescription desc = base;
    config.apply_camera(desc);
    if (f > 0) desc.translate_dynamic(config.velocity * static_cast<double>(f));
    const Scene scene(desc);
    const std::uint32_t frame_index = config.frame + static_cast<std::uint32_t>(f);
    RenderFrameResult out;
    out.frame = frame_index;
    if (config.integrator == IntegratorKind::hybrid) {
      const GBuffer g = build_gbuffer(scene, config.threads);
      // Static geometry does not move, so the static image is built once.
      if (!static_img) static_img = build_static_image(scene, g, config.backend, config.threads);
      HybridOptions options;
      options.spp = config.spp;
      options.adaptive = config.adaptive;
      options.masked = config.masked;
      options.seed = config.seed;
      options.frame = frame_index;
      options.threads = config.threads;
      HybridFrame hf = render_hybrid(scene, g, *static_img, options, stats ? &*stats : nullptr);
      out.image = hf.image;
      out.delta_samples = static_cast<std::uint64_t>(hf.counts.total());
      out.rejected = hf.rejected;
      if (config.dump_buffers) {
        out.buffers["static"] = *static_img;
        out.buffers["delta"] = hf.delta.delta_image();
        out.buffers["mask"] = g.mask_image();
        out.buffers["spp"] = hf.delta.taken_image();
      }
      if (config.dump_sample_map) out.buffers["samplemap"] = hf.map.to_image();
      stats = std::move(hf.stats);
    } else {
      SampleGuard guard;
      out.image = render_path_image(scene, config.integrator, static_cast<int>(config.spp), config.seed, frame_index,
                                    config.threads, &guard);
      out.rejected = guard.rejected();
      if (config.integrator == IntegratorKind::delta_pss) {
        out.delta_samples = static_cast<std::uint64_t>(config.spp) * out.image.size();
      }
    }
    result.frames.push_back(std::move(out));
  }
  return result;
}

/// Output file for a frame and buffer: "<stem>[_fNNN][_buffer].pfm".
inline std::string output_path(const std::string& output, int frames, std::uint32_t frame, const std::string& buffer) {
  std::filesystem::path p(output);
  std::string stem = p.stem().string();
  if (frames > 1) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "_f%03u", frame);
    stem += buf;
  }
  if (!buffer.empty()) stem += "_" + buffer;
  return (p.parent_path() / (stem + ".pfm")).string();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("failed writing '" + path + "'");
}

/// Column order: frame,integrator,spp,seed,mean_r,mean_g,mean_b,delta_samples,rejected_samples
inline std::string render_stats_csv(const RenderConfig& config, const RenderResult& result) {
  std::ostringstream csv;
  csv.precision(9);
  csv << "frame,integrator,spp,seed,mean_r,mean_g,mean_b,delta_samples,rejected_samples\n";
  for (const auto& f : result.frames) {
    const Rgb m = f.image.mean();
    csv << f.frame << ',' << integrator_name(config.integrator) << ',' << config.spp << ',' << config.seed << ','
        << m.r << ',' << m.g << ',' << m.b << ',' << f.delta_samples << ',' << f.rejected << '\n';
  }
  return csv.str();
}

/// Writes final images (clamped), optional buffers (signed) and the stats CSV. Returns the
/// paths written.
inline std::vector<std::string> write_render_outputs(const RenderConfig& config, const RenderResult& result) {
  std::vector<std::string> written;
  for (const auto& f : result.frames) {
    const std::string path = output_path(config.output, config.frames, f.frame, "");
    write_pfm(path, clamp_negative(f.image));
    written.push_back(path);
    for (const auto& [name, img] : f.buffers) {
      const std::string bpath = output_path(config.output, config.frames, f.frame, name);
      write_pfm(bpath, img);
      written.push_back(bpath);
    }
  }
  std::filesystem::path csv(config.output);
  csv.replace_extension(".csv");
  write_text(csv.string(), render_stats_csv(config, result));
  written.push_back(csv.string());
  return written;
}

// ---------------------------------------------------------------------------------------
// Equal-cost experiments

struct ExperimentArm {
  std::string name;
  IntegratorKind integrator = IntegratorKind::reference_dynamic;
  double spp = 1.0;
  bool adaptive = false;
  bool masked = true;
  // Adaptive arms: frames rendered first so the measured frame allocates from the previous
  // frame's statistics instead of a pilot pass. Each frame has the same cost.
  int warmup_frames = 0;

  double cost() const { return spp * cost_per_sample(integrator); }
};

struct ExperimentSpec {
  std::vector<ExperimentArm> arms;
  int reference_spp = 4096;
  int oracle_spp = 4096;  // static image for hybrid arms
  int seeds = 10;
  std::uint64_t base_seed = 1;
  int threads = 1;
};

struct ExperimentRow {
  std::string arm;
  std::uint64_t seed = 0;
  double cost_spp = 0.0;
  bool ok = true;
  std::string error;
  MetricsReport metrics;
};

struct ExperimentResult {
  Image reference;
  std::vector<ExperimentRow> rows;

  /// Median MSE of an arm over its successful seeds (NaN when none succeeded).
  double median_mse(const std::string& arm) const {
    std::vector<double> v;
    for (const auto& r : rows) {
      if (r.arm == arm && r.ok) v.push_back(r.metrics.mse);
    }
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  }
};

inline constexpr std::uint64_t kReferenceSeed = 0x7265666572656E63ull;
inline constexpr std::uint64_t kExperimentOracleSeed = 0x6F7261636C65ull;

inline ExperimentResult run_experiment(const Scene& scene, const ExperimentSpec& spec,
                                       const Image* reference = nullptr, const Image* static_img = nullptr) {
  ExperimentResult result;
  result.reference = reference ? *reference
                               : render_path_image(scene, IntegratorKind::reference_dynamic, spec.reference_spp,
                                                   kReferenceSeed, 0, spec.threads);
  const GBuffer g = build_gbuffer(scene, spec.threads);
  std::optional<Image> oracle_img;
  if (static_img) oracle_img = *static_img;
  for (const ExperimentArm& arm : spec.arms) {
    for (int k = 0; k < spec.seeds; ++k) {
      ExperimentRow row;
      row.arm = arm.name;
      row.seed = spec.base_seed + static_cast<std::uint64_t>(k);
      row.cost_spp = arm.cost();
      try {
        Image img;
        if (arm.integrator == IntegratorKind::hybrid) {
          if (!oracle_img) {
            oracle_img = static_image(scene, g, OracleField(scene, spec.oracle_spp, kExperimentOracleSeed), 0,
                                      spec.threads);
          }
          HybridOptions options;
          options.spp = arm.spp;
          options.adaptive = arm.adaptive;
          options.masked = arm.masked;
          options.seed = row.seed;
          options.threads = spec.threads;
          std::optional<StatsBuffer> stats;
          const int frames = arm.adaptive ? arm.warmup_frames + 1 : 1;
          for (int f = 0; f < frames; ++f) {
            options.frame = static_cast<std::uint32_t>(f);
            HybridFrame hf = render_hybrid(scene, g, *oracle_img, options, stats ? &*stats : nullptr);
            img = std::move(hf.image);
            stats = std::move(hf.stats);
          }
        } else {
          img = render_path_image(scene, arm.integrator, static_cast<int>(arm.spp), row.seed, 0, spec.threads);
        }
        row.metrics = compute_metrics(img, result.reference, &g);
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
        spdlog::error("experiment arm '{}' seed {} failed: {}", arm.name, row.seed, e.what());
      }
      result.rows.push_back(std::move(row));
    }
  }
  return result;
}

/// Column order: arm,seed,cost_spp,ok,mse,rel_mse,mse_dynamic,mse_static,rel_mse_dynamic,rel_mse_static,error
inline std::string experiment_csv(const ExperimentResult& result) {
  std::ostringstream csv;
  csv.precision(9);
  csv << "arm,seed,cost_spp,ok,mse,rel_mse,mse_dynamic,mse_static,rel_mse_dynamic,rel_mse_static,error\n";
  for (const auto& r : result.rows) {
    const auto& m = r.metrics;
    std::string error = r.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    csv << r.arm << ',' << r.seed << ',' << r.cost_spp << ',' << (r.ok ? 1 : 0) << ',' << m.mse << ',' << m.rel_mse
        << ',' << m.mse_dynamic << ',' << m.mse_static << ',' << m.rel_mse_dynamic << ',' << m.rel_mse_static << ','
        << error << '\n';
  }
  return csv.str();
}

// ---------------------------------------------------------------------------------------
// Goldens

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace deltapath
