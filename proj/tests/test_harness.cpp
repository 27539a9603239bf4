#include <gtest/gtest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "deltapath/harness.hpp"
#include "json.hpp"
#include "test_scenes.hpp"

using namespace deltapath;
using testing_scenes::bundled;
using testing_scenes::scene_path;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("deltapath_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DELTAPATH_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

RenderConfig small_config(const std::string& scene, IntegratorKind kind, double spp) {
  RenderConfig c;
  c.scene = scene_path(scene);
  c.integrator = kind;
  c.spp = spp;
  c.width = 12;
  c.height = 12;
  c.backend = OracleBackend{8};
  return c;
}

bool bitwise_equal(const Image& a, const Image& b) {
  return a.same_size(b) && encode_pfm(a) == encode_pfm(b);
}

}  // namespace

TEST(Integrators, NamesRoundTrip) {
  for (const auto& [kind, name] : kIntegratorNames) {
    ASSERT_TRUE(parse_integrator(name));
    EXPECT_EQ(*parse_integrator(name), kind);
    EXPECT_EQ(integrator_name(kind), name);
  }
  EXPECT_FALSE(parse_integrator("bidirectional"));
  EXPECT_EQ(cost_per_sample(IntegratorKind::reference_dynamic), 1.0);
  EXPECT_EQ(cost_per_sample(IntegratorKind::hybrid), 2.0);
}

TEST(Render, DeterministicAcrossThreadCounts) {
  for (const auto kind : {IntegratorKind::reference_dynamic, IntegratorKind::delta_pss, IntegratorKind::hybrid}) {
    RenderConfig c = small_config("cornell_sphere", kind, 3);
    c.adaptive = kind == IntegratorKind::hybrid;
    c.frames = 2;
    const auto desc = bundled("cornell_sphere");
    c.threads = 1;
    const RenderResult a = render(c, desc);
    c.threads = 4;
    const RenderResult b = render(c, desc);
    ASSERT_EQ(a.frames.size(), 2u);
    for (std::size_t f = 0; f < a.frames.size(); ++f) {
      EXPECT_TRUE(bitwise_equal(a.frames[f].image, b.frames[f].image)) << integrator_name(kind) << " frame " << f;
    }
  }
}

TEST(Render, SeedChangesImage) {
  const auto desc = bundled("cornell_sphere");
  RenderConfig c = small_config("cornell_sphere", IntegratorKind::reference_dynamic, 2);
  const Image a = render(c, desc).frames[0].image;
  c.seed = 2;
  const Image b = render(c, desc).frames[0].image;
  EXPECT_FALSE(bitwise_equal(a, b));
}

TEST(Render, FurnaceIsOne) {
  RenderConfig c = small_config("furnace", IntegratorKind::reference_dynamic, 1024);
  c.width = 8;
  c.height = 8;
  const Rgb m = render(c, bundled("furnace")).frames[0].image.mean();
  for (int ch = 0; ch < 3; ++ch) EXPECT_NEAR(m[ch], 1.0, 0.01);
}

TEST(Render, HybridZeroBudgetTakesOnlyFloorSamples) {
  const auto desc = bundled("cornell_sphere");
  RenderConfig c = small_config("cornell_sphere", IntegratorKind::hybrid, 0.0);
  const RenderFrameResult f = render(c, desc).frames[0];
  // One sample per 2x2 block on a 12x12 image.
  EXPECT_EQ(f.delta_samples, 36u);
  for (std::size_t i = 0; i < f.image.size(); ++i) ASSERT_TRUE(f.image[i].is_finite());
}

TEST(Render, VideoMovesDynamicObjects) {
  const auto desc = bundled("cornell_sphere");
  RenderConfig c = small_config("cornell_sphere", IntegratorKind::hybrid, 1);
  c.frames = 3;
  c.velocity = Vec3{0.1, 0.0, 0.0};
  c.dump_buffers = true;
  const RenderResult r = render(c, desc);
  ASSERT_EQ(r.frames.size(), 3u);
  EXPECT_EQ(r.frames[2].frame, 2u);
  // Static image is shared, mask follows the moving object.
  EXPECT_TRUE(bitwise_equal(r.frames[0].buffers.at("static"), r.frames[2].buffers.at("static")));
  EXPECT_FALSE(bitwise_equal(r.frames[0].buffers.at("mask"), r.frames[2].buffers.at("mask")));

  // Frame 2 of the video equals a single render of the translated scene at frame index 2,
  // except for adaptive feedback, which is off here.
  SceneDescription moved = desc;
  moved.translate_dynamic(Vec3{0.2, 0.0, 0.0});
  RenderConfig single = small_config("cornell_sphere", IntegratorKind::hybrid, 1);
  single.frame = 2;
  const Image direct = render(single, moved).frames[0].image;
  EXPECT_TRUE(bitwise_equal(direct, r.frames[2].image));
}

TEST(Render, RejectsInvalidConfig) {
  const auto desc = bundled("cornell_sphere");
  RenderConfig c = small_config("cornell_sphere", IntegratorKind::reference_dynamic, 1.5);
  EXPECT_THROW(render(c, desc), ConfigError);
  c.spp = 0;
  EXPECT_THROW(render(c, desc), ConfigError);
  c = small_config("cornell_sphere", IntegratorKind::hybrid, 1);
  c.width = 4;
  EXPECT_THROW(render(c, desc), ConfigError);
  c = small_config("cornell_sphere", IntegratorKind::hybrid, 1);
  c.fov = 180.0;
  EXPECT_THROW(render(c, desc), ConfigError);
}

TEST(Render, OutputPaths) {
  EXPECT_EQ(output_path("out/img.pfm", 1, 0, ""), "out/img.pfm");
  EXPECT_EQ(output_path("out/img.pfm", 3, 7, ""), "out/img_f007.pfm");
  EXPECT_EQ(output_path("img.pfm", 2, 1, "mask"), "img_f001_mask.pfm");
}

TEST(Render, WritesBuffersAndStats) {
  const auto dir = scratch_dir("buffers");
  RenderConfig c = small_config("cornell_sphere", IntegratorKind::hybrid, 1);
  c.dump_buffers = true;
  c.dump_sample_map = true;
  c.output = (dir / "img.pfm").string();
  const auto written = write_render_outputs(c, render(c, bundled("cornell_sphere")));
  for (const char* name : {"img.pfm", "img_static.pfm", "img_delta.pfm", "img_mask.pfm", "img_spp.pfm",
                           "img_samplemap.pfm", "img.csv"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  }
  const Image img = read_pfm((dir / "img.pfm").string());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_GE(std::min({img[i].r, img[i].g, img[i].b}), 0.0);
  std::ifstream csv(dir / "img.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "frame,integrator,spp,seed,mean_r,mean_g,mean_b,delta_samples,rejected_samples");
}

TEST(Experiment, IdenticalArmsMatchAndCostsAreReported) {
  const Scene scene(testing_scenes::with_resolution(bundled("cornell_sphere"), 8, 8));
  ExperimentSpec spec;
  spec.arms = {{"a", IntegratorKind::reference_dynamic, 4}, {"b", IntegratorKind::reference_dynamic, 4},
               {"h", IntegratorKind::hybrid, 2}};
  spec.reference_spp = 64;
  spec.oracle_spp = 16;
  spec.seeds = 3;
  const ExperimentResult r = run_experiment(scene, spec);
  ASSERT_EQ(r.rows.size(), 9u);
  EXPECT_EQ(r.median_mse("a"), r.median_mse("b"));
  EXPECT_GT(r.median_mse("a"), 0.0);
  EXPECT_EQ(r.rows[6].cost_spp, 4.0);
  const std::string csv = experiment_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "arm,seed,cost_spp,ok,mse,rel_mse,mse_dynamic,mse_static,rel_mse_dynamic,rel_mse_static,error");
}

TEST(Experiment, FailingArmDoesNotAbortRun) {
  const Scene scene(testing_scenes::with_resolution(bundled("cornell_sphere"), 8, 8));
  ExperimentSpec spec;
  spec.arms = {{"bad", IntegratorKind::hybrid, -1.0}, {"good", IntegratorKind::reference_dynamic, 1}};
  spec.reference_spp = 16;
  spec.oracle_spp = 4;
  spec.seeds = 2;
  const ExperimentResult r = run_experiment(scene, spec);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_FALSE(r.rows[0].ok);
  EXPECT_FALSE(r.rows[0].error.empty());
  EXPECT_TRUE(std::isnan(r.median_mse("bad")));
  EXPECT_TRUE(r.rows[3].ok);
}

TEST(Goldens, Fnv1aKnownValues) {
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cull);
  EXPECT_EQ(fnv1a64("foobar"), 0x85944171f73967e8ull);
  EXPECT_EQ(hex64(0xabcull), "0000000000000abc");
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("cli");
  const std::string scene = scene_path("cornell_sphere");
  const std::string out = (dir / "x.pfm").string();
  const std::string small = " --width 8 --height 8 --oracle-spp 2 --spp 1 ";
  EXPECT_EQ(run_cli("render " + scene + small + "-o " + out), 0);
  EXPECT_TRUE(std::filesystem::exists(out));
  EXPECT_EQ(run_cli("render " + scene + " --spp -1"), 2);
  EXPECT_EQ(run_cli("render " + scene + " --integrator nope"), 2);
  EXPECT_EQ(run_cli("render " + scene + " --width 4"), 2);
  EXPECT_EQ(run_cli("--bogus"), 2);
  EXPECT_EQ(run_cli("render " + (dir / "missing.json").string()), 3);

  const auto bad_scene = dir / "bad.json";
  std::ofstream(bad_scene) << "{ \"camera\": ";
  EXPECT_EQ(run_cli("render " + bad_scene.string()), 3);

  const auto bad_field = dir / "bad.dpsf";
  std::ofstream(bad_field) << "not a field";
  EXPECT_EQ(run_cli("render " + scene + small + "--field " + bad_field.string() + " -o " + out), 4);
  EXPECT_EQ(run_cli("render " + scene + small + "--field " + (dir / "none.dpsf").string() + " -o " + out), 4);

  EXPECT_EQ(run_cli("render " + scene + small + "-o " + (dir / "no/such/dir/x.pfm").string()), 5);
}

TEST(Cli, TrainAndEvaluateTinyField) {
  const auto dir = scratch_dir("train");
  const std::string field = (dir / "f.dpsf").string();
  EXPECT_EQ(run_cli("train-field " + scene_path("furnace") +
                    " --samples 2048 --epochs 1 --levels 2 --log2-table 8 --hidden-layers 1 --hidden-width 8 -o " +
                    field),
            0);
  EXPECT_NO_THROW(load_field(field));
  EXPECT_EQ(run_cli("eval-field " + scene_path("furnace") + " --field " + field + " --oracle-spp 2 --width 8 --height 8"),
            0);
  EXPECT_EQ(run_cli("train-field " + scene_path("furnace") + " --epochs 0"), 2);
}

TEST(Cli, GoldensMatchAndDetectMismatch) {
  const std::string goldens = std::string(DELTAPATH_SOURCE_DIR) + "/tests/goldens.json";
  EXPECT_EQ(run_cli("goldens --file " + goldens), 0);

  const auto dir = scratch_dir("goldens");
  std::ifstream in(goldens);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto doc = nlohmann::json::parse(text);
  doc["goldens"] = nlohmann::json::array({doc["goldens"][0]});
  doc["goldens"][0]["scene"] = scene_path("cornell_sphere");
  doc["goldens"][0]["hash"] = "0000000000000000";
  std::ofstream(dir / "g.json") << doc.dump(2);
  EXPECT_EQ(run_cli("goldens --file " + (dir / "g.json").string()), 6);
}
