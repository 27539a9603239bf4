#pragma once

#include <string>

#include "deltapath/scene.hpp"
#include "deltapath/scene_io.hpp"

namespace testing_scenes {

using namespace deltapath;

inline std::string scene_path(const std::string& name) {
  return std::string(DELTAPATH_SOURCE_DIR) + "/scenes/" + name + ".json";
}

inline SceneDescription bundled(const std::string& name) { return load_scene(scene_path(name)); }

inline PrimitiveDesc sphere(Vec3 c, double r, const std::string& material, bool dynamic = false,
                            const std::string& id = {}) {
  return PrimitiveDesc{Sphere{c, r}, material, dynamic, id};
}

/// Two triangles spanning the quad a-b-c-d (normal follows the a-b-c winding).
inline void add_quad(SceneDescription& desc, Vec3 a, Vec3 b, Vec3 c, Vec3 d, const std::string& material,
                     bool dynamic = false, const std::string& id = {}) {
  desc.primitives.push_back(PrimitiveDesc{Triangle{{a, b, c}, std::nullopt}, material, dynamic, id});
  desc.primitives.push_back(PrimitiveDesc{Triangle{{a, c, d}, std::nullopt}, material, dynamic, id});
}

inline SceneDescription empty_scene(Rgb env = Rgb{}) {
  SceneDescription desc;
  desc.materials.push_back(Material{"white", Rgb(0.5), Rgb{}, MaterialKind::lambertian});
  desc.env_static = EnvironmentMap(env);
  desc.camera.width = 8;
  desc.camera.height = 8;
  return desc;
}

inline SceneDescription without_dynamic(SceneDescription desc) {
  std::erase_if(desc.primitives, [](const PrimitiveDesc& p) { return p.dynamic; });
  return desc;
}

inline SceneDescription with_resolution(SceneDescription desc, int w, int h) {
  desc.camera.width = w;
  desc.camera.height = h;
  return desc;
}

}  // namespace testing_scenes
