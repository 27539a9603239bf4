// deltapath command-line tool.
//
// Exit codes:
//   0  success
//   1  unexpected failure (including diverged training)
//   2  invalid arguments
//   3  scene file missing or invalid
//   4  static field file missing or invalid
//   5  output could not be written
//   6  golden mismatch

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "deltapath/harness.hpp"
#include "json.hpp"

using namespace deltapath;

namespace {

enum ExitCode : int {
  kOk = 0,
  kUnexpected = 1,
  kBadArguments = 2,
  kSceneError = 3,
  kFieldError = 4,
  kWriteError = 5,
  kGoldenMismatch = 6,
};

/// Error that already carries its exit code.
struct Failure {
  int code;
  std::string message;
};

SceneDescription load_scene_or_fail(const std::string& path) {
  try {
    return load_scene(path);
  } catch (const ConfigError& e) {
    throw Failure{kSceneError, e.what()};
  } catch (const IoError& e) {
    throw Failure{kSceneError, e.what()};
  }
}

Scene build_scene_or_fail(const SceneDescription& desc) {
  try {
    return Scene(desc);
  } catch (const ConfigError& e) {
    throw Failure{kSceneError, e.what()};
  }
}

LearnedField<float> load_field_or_fail(const std::string& path) {
  try {
    return load_field(path);
  } catch (const IoError& e) {
    throw Failure{kFieldError, e.what()};
  }
}

Vec3 to_vec3(const std::vector<double>& v) { return {v[0], v[1], v[2]}; }

// ---------------------------------------------------------------------------------------

struct RenderArgs {
  std::string scene;
  std::string integrator = "hybrid";
  double spp = 1.0;
  std::uint64_t seed = 1;
  std::uint32_t frame = 0;
  int frames = 1;
  std::vector<double> velocity;
  int width = 0;
  int height = 0;
  double fov = 0.0;
  std::vector<double> camera_position;
  std::vector<double> look_at;
  std::string field;
  int oracle_spp = 256;
  bool no_mask = false;
  bool adaptive = false;
  bool dump_buffers = false;
  bool dump_sample_map = false;
  int threads = 1;
  std::string output = "out.pfm";
};

RenderConfig make_render_config(const RenderArgs& a) {
  RenderConfig c;
  c.scene = a.scene;
  const auto kind = parse_integrator(a.integrator);
  if (!kind) throw Failure{kBadArguments, "unknown integrator '" + a.integrator + "'"};
  c.integrator = *kind;
  c.spp = a.spp;
  c.seed = a.seed;
  c.frame = a.frame;
  c.frames = a.frames;
  if (!a.velocity.empty()) c.velocity = to_vec3(a.velocity);
  if (a.width) c.width = a.width;
  if (a.height) c.height = a.height;
  if (a.fov != 0.0) c.fov = a.fov;
  if (!a.camera_position.empty()) c.camera_position = to_vec3(a.camera_position);
  if (!a.look_at.empty()) c.camera_look_at = to_vec3(a.look_at);
  if (!a.field.empty()) {
    c.backend = LearnedBackend{a.field};
  } else {
    c.backend = OracleBackend{a.oracle_spp};
  }
  c.masked = !a.no_mask;
  c.adaptive = a.adaptive;
  c.dump_buffers = a.dump_buffers;
  c.dump_sample_map = a.dump_sample_map;
  c.threads = a.threads;
  c.output = a.output;
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw Failure{kBadArguments, e.what()};
  }
  return c;
}

int run_render(const RenderArgs& args) {
  const RenderConfig config = make_render_config(args);
  SceneDescription desc = load_scene_or_fail(config.scene);
  {
    SceneDescription probe = desc;
    try {
      config.apply_camera(probe);
    } catch (const ConfigError& e) {
      throw Failure{kBadArguments, e.what()};
    }
    build_scene_or_fail(probe);
  }
  if (const auto* learned = std::get_if<LearnedBackend>(&config.backend)) load_field_or_fail(learned->path);
  const RenderResult result = render(config, desc);
  std::vector<std::string> written;
  try {
    written = write_render_outputs(config, result);
  } catch (const IoError& e) {
    throw Failure{kWriteError, e.what()};
  }
  for (const auto& f : result.frames) {
    const Rgb m = f.image.mean();
    spdlog::info("frame {}: mean ({:.6f}, {:.6f}, {:.6f}), {} delta samples, {} rejected", f.frame, m.r, m.g, m.b,
                 f.delta_samples, f.rejected);
  }
  for (const auto& p : written) std::cout << p << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct TrainArgs {
  std::string scene;
  std::size_t samples = std::size_t{1} << 21;
  std::uint64_t dataset_seed = 1;
  TrainingConfig training;
  HashGridConfig grid;
  MlpConfig mlp;
  std::uint64_t init_seed = 1;
  int threads = 1;
  std::string output = "field.dpsf";
};

int run_train(const TrainArgs& a) {
  try {
    a.grid.validate();
    a.mlp.validate();
  } catch (const ConfigError& e) {
    throw Failure{kBadArguments, e.what()};
  }
  if (a.samples == 0 || a.training.epochs < 1 || a.training.batch_size < 1 || a.training.learning_rate < 0.0) {
    throw Failure{kBadArguments, "samples, epochs and batch size must be positive, learning rate >= 0"};
  }
  const Scene scene = build_scene_or_fail(load_scene_or_fail(a.scene));
  const auto start = std::chrono::steady_clock::now();
  const auto data = generate_dataset(scene, a.samples, a.dataset_seed, a.threads);
  spdlog::info("dataset: {} samples in {:.1f} s", data.size(),
               std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  LearnedField<float> field(a.grid, a.mlp, scene.static_bounds(), a.init_seed);
  const TrainingReport report = train_field(field, data, a.training, [&](int epoch, double loss) {
    spdlog::info("epoch {}: loss {:.6f} ({:.1f} s)", epoch, loss,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  });
  spdlog::info("initial loss {:.6f}, final loss {:.6f}", report.initial_loss, report.final_loss);
  try {
    save_field(a.output, field);
  } catch (const IoError& e) {
    throw Failure{kWriteError, e.what()};
  }
  std::cout << a.output << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct EvalArgs {
  std::string scene;
  std::string field;
  int oracle_spp = 1024;
  std::uint64_t seed = 1;
  int width = 0;
  int height = 0;
  int threads = 1;
  std::string output;
};

int run_eval(const EvalArgs& a) {
  if (a.oracle_spp < 1) throw Failure{kBadArguments, "oracle spp must be >= 1"};
  if ((a.width && a.width < 8) || (a.height && a.height < 8)) throw Failure{kBadArguments, "resolution must be >= 8"};
  SceneDescription desc = load_scene_or_fail(a.scene);
  if (a.width) desc.camera.width = a.width;
  if (a.height) desc.camera.height = a.height;
  const Scene scene = build_scene_or_fail(desc);
  const LearnedField<float> field = load_field_or_fail(a.field);
  const GBuffer g = build_gbuffer(scene, a.threads);
  const Image learned = static_image(scene, g, field);
  const Image oracle = static_image(scene, g, OracleField(scene, a.oracle_spp, a.seed), 0, a.threads);
  const MetricsReport m = compute_metrics(learned, oracle);
  std::cout << "mse,rel_mse\n" << m.mse << ',' << m.rel_mse << '\n';
  if (!a.output.empty()) {
    try {
      write_pfm(a.output, clamp_negative(learned));
    } catch (const IoError& e) {
      throw Failure{kWriteError, e.what()};
    }
  }
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct ExperimentArgs {
  std::string scene;
  std::vector<std::string> arms{"pt:reference-dynamic:2", "hybrid:hybrid:1", "hybrid-adaptive:hybrid:1:adaptive:warmup=3"};
  int seeds = 10;
  int reference_spp = 4096;
  int oracle_spp = 4096;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string output = "experiment.csv";
};

/// name:integrator:spp[:adaptive][:unmasked][:warmup=N]
ExperimentArm parse_arm(const std::string& text) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
  if (parts.size() < 3) throw Failure{kBadArguments, "arm must be name:integrator:spp[:adaptive][:unmasked][:warmup=N]"};
  ExperimentArm arm;
  arm.name = parts[0];
  const auto kind = parse_integrator(parts[1]);
  if (!kind) throw Failure{kBadArguments, "unknown integrator '" + parts[1] + "' in arm '" + text + "'"};
  arm.integrator = *kind;
  try {
    arm.spp = std::stod(parts[2]);
  } catch (const std::exception&) {
    throw Failure{kBadArguments, "bad spp in arm '" + text + "'"};
  }
  for (std::size_t i = 3; i < parts.size(); ++i) {
    if (parts[i] == "adaptive") {
      arm.adaptive = true;
    } else if (parts[i] == "unmasked") {
      arm.masked = false;
    } else if (parts[i].rfind("warmup=", 0) == 0) {
      try {
        arm.warmup_frames = std::stoi(parts[i].substr(7));
      } catch (const std::exception&) {
        throw Failure{kBadArguments, "bad warmup in arm '" + text + "'"};
      }
      if (arm.warmup_frames < 0) throw Failure{kBadArguments, "warmup must be >= 0"};
    } else {
      throw Failure{kBadArguments, "unknown arm flag '" + parts[i] + "'"};
    }
  }
  if (arm.integrator != IntegratorKind::hybrid && (arm.spp < 1 || arm.spp != std::floor(arm.spp))) {
    throw Failure{kBadArguments, "arm '" + arm.name + "' needs an integer spp >= 1"};
  }
  return arm;
}

int run_experiment_command(const ExperimentArgs& a) {
  ExperimentSpec spec;
  for (const auto& text : a.arms) spec.arms.push_back(parse_arm(text));
  if (a.seeds < 1 || a.reference_spp < 1 || a.oracle_spp < 1) throw Failure{kBadArguments, "counts must be >= 1"};
  spec.seeds = a.seeds;
  spec.reference_spp = a.reference_spp;
  spec.oracle_spp = a.oracle_spp;
  spec.base_seed = a.seed;
  spec.threads = a.threads;
  const Scene scene = build_scene_or_fail(load_scene_or_fail(a.scene));
  const ExperimentResult result = run_experiment(scene, spec);
  try {
    write_text(a.output, experiment_csv(result));
  } catch (const IoError& e) {
    throw Failure{kWriteError, e.what()};
  }
  for (const auto& arm : spec.arms) {
    std::printf("%-20s cost %6.2f spp  median MSE %.6g\n", arm.name.c_str(), arm.cost(), result.median_mse(arm.name));
  }
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct GoldenArgs {
  std::string file = "tests/goldens.json";
  bool update = false;
  int threads = 1;
};

int run_goldens(const GoldenArgs& a) {
  nlohmann::json doc;
  {
    std::ifstream in(a.file);
    if (!in) throw Failure{kBadArguments, "cannot read goldens file '" + a.file + "'"};
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw Failure{kBadArguments, std::string("goldens file: ") + e.what()};
    }
  }
  int mismatches = 0;
  for (auto& entry : doc["goldens"]) {
    RenderArgs args;
    args.scene = (std::filesystem::path(a.file).parent_path() / entry.at("scene").get<std::string>()).string();
    args.width = entry.value("width", 0);
    args.height = entry.value("height", 0);
    args.integrator = entry.at("integrator").get<std::string>();
    args.spp = entry.at("spp").get<double>();
    args.seed = entry.value("seed", std::uint64_t{1});
    args.adaptive = entry.value("adaptive", false);
    args.oracle_spp = entry.value("oracle_spp", 16);
    args.frames = entry.value("frames", 1);
    args.threads = a.threads;
    const RenderConfig config = make_render_config(args);
    const RenderResult result = render(config, load_scene_or_fail(config.scene));
    std::string bytes;
    for (const auto& f : result.frames) bytes += encode_pfm(clamp_negative(f.image));
    const std::string hash = hex64(fnv1a64(bytes));
    const std::string name = entry.at("name").get<std::string>();
    if (a.update) {
      entry["hash"] = hash;
      std::printf("%-28s %s\n", name.c_str(), hash.c_str());
    } else if (entry.value("hash", std::string{}) != hash) {
      ++mismatches;
      std::printf("MISMATCH %-28s expected %s got %s\n", name.c_str(), entry.value("hash", std::string{}).c_str(),
                  hash.c_str());
    } else {
      std::printf("ok       %-28s %s\n", name.c_str(), hash.c_str());
    }
  }
  if (a.update) {
    try {
      write_text(a.file, doc.dump(2) + "\n");
    } catch (const IoError& e) {
      throw Failure{kWriteError, e.what()};
    }
  }
  return mismatches ? kGoldenMismatch : kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deltapath: hybrid static/delta Monte Carlo renderer"};
  app.require_subcommand(1);

  RenderArgs render_args;
  auto* render_cmd = app.add_subcommand("render", "Render a scene");
  render_cmd->add_option("scene", render_args.scene, "Scene file (or name under $DELTAPATH_SCENE_DIR)")->required();
  render_cmd->add_option("--integrator", render_args.integrator,
                         "reference-static | reference-dynamic | additive | subtractive | delta-pss | hybrid");
  render_cmd->add_option("--spp", render_args.spp, "Samples per pixel (mean delta samples for hybrid)");
  render_cmd->add_option("--seed", render_args.seed, "Random seed");
  render_cmd->add_option("--frame", render_args.frame, "Index of the first frame");
  render_cmd->add_option("--frames", render_args.frames, "Number of frames (video mode)");
  render_cmd->add_option("--velocity", render_args.velocity, "Dynamic object translation per frame")->expected(3);
  render_cmd->add_option("--width", render_args.width, "Image width");
  render_cmd->add_option("--height", render_args.height, "Image height");
  render_cmd->add_option("--fov", render_args.fov, "Vertical field of view in degrees");
  render_cmd->add_option("--camera-position", render_args.camera_position, "Camera position")->expected(3);
  render_cmd->add_option("--look-at", render_args.look_at, "Camera target")->expected(3);
  render_cmd->add_option("--field", render_args.field, "Learned static field file (default: path-traced oracle)");
  render_cmd->add_option("--oracle-spp", render_args.oracle_spp, "Samples per pixel of the oracle static image");
  render_cmd->add_flag("--no-mask", render_args.no_mask, "Composite without the dynamic-object mask");
  render_cmd->add_flag("--adaptive", render_args.adaptive, "Adaptive delta sample allocation");
  render_cmd->add_flag("--dump-buffers", render_args.dump_buffers, "Also write static, delta, mask and spp images");
  render_cmd->add_flag("--dump-sample-map", render_args.dump_sample_map, "Also write the sample map");
  render_cmd->add_option("--threads", render_args.threads, "Worker threads");
  render_cmd->add_option("-o,--output", render_args.output, "Output PFM path");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train-field", "Train a learned static field");
  train_cmd->add_option("scene", train_args.scene, "Scene file")->required();
  train_cmd->add_option("--samples", train_args.samples, "Training samples");
  train_cmd->add_option("--dataset-seed", train_args.dataset_seed, "Dataset seed");
  train_cmd->add_option("--epochs", train_args.training.epochs, "Epochs");
  train_cmd->add_option("--batch", train_args.training.batch_size, "Batch size");
  train_cmd->add_option("--lr", train_args.training.learning_rate, "Initial learning rate");
  train_cmd->add_option("--decay", train_args.training.decay, "Learning rate factor per epoch");
  train_cmd->add_option("--shuffle-seed", train_args.training.seed, "Shuffle seed");
  train_cmd->add_option("--init-seed", train_args.init_seed, "Parameter initialisation seed");
  train_cmd->add_option("--levels", train_args.grid.levels, "Hash grid levels");
  train_cmd->add_option("--log2-table", train_args.grid.log2_table_size, "log2 of the hash table size");
  train_cmd->add_option("--features", train_args.grid.features, "Features per level");
  train_cmd->add_option("--base-resolution", train_args.grid.base_resolution, "Coarsest grid resolution");
  train_cmd->add_option("--finest-resolution", train_args.grid.finest_resolution, "Finest grid resolution");
  train_cmd->add_option("--hidden-layers", train_args.mlp.hidden_layers, "MLP hidden layers");
  train_cmd->add_option("--hidden-width", train_args.mlp.width, "MLP hidden width");
  train_cmd->add_option("--threads", train_args.threads, "Worker threads for dataset generation");
  train_cmd->add_option("-o,--output", train_args.output, "Field file to write");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval-field", "Compare a learned field against the path-traced oracle");
  eval_cmd->add_option("scene", eval_args.scene, "Scene file")->required();
  eval_cmd->add_option("--field", eval_args.field, "Field file")->required();
  eval_cmd->add_option("--oracle-spp", eval_args.oracle_spp, "Oracle samples per pixel");
  eval_cmd->add_option("--seed", eval_args.seed, "Oracle seed");
  eval_cmd->add_option("--width", eval_args.width, "Image width");
  eval_cmd->add_option("--height", eval_args.height, "Image height");
  eval_cmd->add_option("--threads", eval_args.threads, "Worker threads");
  eval_cmd->add_option("-o,--output", eval_args.output, "Write the learned static image here");

  ExperimentArgs exp_args;
  auto* exp_cmd = app.add_subcommand("experiment", "Equal-cost error comparison");
  exp_cmd->add_option("scene", exp_args.scene, "Scene file")->required();
  exp_cmd->add_option("--arm", exp_args.arms, "name:integrator:spp[:adaptive][:unmasked][:warmup=N] (repeatable)");
  exp_cmd->add_option("--seeds", exp_args.seeds, "Seeds per arm");
  exp_cmd->add_option("--reference-spp", exp_args.reference_spp, "Reference samples per pixel");
  exp_cmd->add_option("--oracle-spp", exp_args.oracle_spp, "Oracle static image samples per pixel");
  exp_cmd->add_option("--seed", exp_args.seed, "First seed");
  exp_cmd->add_option("--threads", exp_args.threads, "Worker threads");
  exp_cmd->add_option("-o,--output", exp_args.output, "CSV output");

  GoldenArgs golden_args;
  auto* golden_cmd = app.add_subcommand("goldens", "Check or update regression image hashes");
  golden_cmd->add_option("--file", golden_args.file, "Goldens JSON file");
  golden_cmd->add_flag("--update", golden_args.update, "Rewrite the stored hashes");
  golden_cmd->add_option("--threads", golden_args.threads, "Worker threads");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kBadArguments;
  }

  try {
    if (*render_cmd) return run_render(render_args);
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*exp_cmd) return run_experiment_command(exp_args);
    if (*golden_cmd) return run_goldens(golden_args);
  } catch (const Failure& f) {
    spdlog::error("{}", f.message);
    return f.code;
  } catch (const TrainingDiverged& e) {
    spdlog::error("training diverged: {}", e.what());
    return kUnexpected;
  } catch (const std::exception& e) {
    spdlog::error("unexpected error: {}", e.what());
    return kUnexpected;
  }
  return kUnexpected;
}
