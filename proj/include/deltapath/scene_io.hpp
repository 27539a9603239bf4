#pragma once

// JSON scene files. See README.md for the schema.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "deltapath/errors.hpp"
#include "deltapath/image.hpp"
#include "deltapath/scene.hpp"

namespace deltapath {

namespace scene_io_detail {

using nlohmann::json;

inline Vec3 read_vec3(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(what) + " must be a 3-element array");
  Vec3 v{j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
  if (!is_finite(v)) throw ConfigError(std::string(what) + " must be finite");
  return v;
}

inline Rgb read_rgb(const json& j, const char* what) {
  if (j.is_number()) return Rgb(j.get<double>());
  const Vec3 v = read_vec3(j, what);
  return {v.x, v.y, v.z};
}

inline EnvironmentMap read_environment(const json& j, const std::filesystem::path& base_dir) {
  if (j.contains("constant")) return EnvironmentMap(read_rgb(j["constant"], "environment constant"));
  const double scale = j.value("scale", 1.0);
  if (j.contains("file")) {
    const std::filesystem::path file = base_dir / j["file"].get<std::string>();
    Image image;
    try {
      image = read_pfm(file.string());
    } catch (const IoError& e) {
      throw ConfigError(std::string("environment map: ") + e.what());
    }
    std::vector<Rgb> texels = image.pixels();
    for (Rgb& t : texels) t *= scale;
    return {image.width(), image.height(), std::move(texels)};
  }
  if (j.contains("texels")) {
    const int width = j.at("width").get<int>();
    const int height = j.at("height").get<int>();
    std::vector<Rgb> texels;
    for (const json& t : j["texels"]) texels.push_back(read_rgb(t, "environment texel") * scale);
    return {width, height, std::move(texels)};
  }
  throw ConfigError("environment needs one of 'constant', 'file' or 'texels'");
}

inline std::map<std::string, EmitterOverride> read_overrides(const json& j) {
  std::map<std::string, EmitterOverride> out;
  for (const auto& [id, o] : j.items()) {
    EmitterOverride ov;
    if (o.contains("emission")) ov.emission = read_rgb(o["emission"], "emission override");
    if (o.contains("translate")) ov.translate = read_vec3(o["translate"], "translate override");
    out.emplace(id, ov);
  }
  return out;
}

}  // namespace scene_io_detail

/// Parses a scene document. Relative file references resolve against `base_dir`.
inline SceneDescription parse_scene(const std::string& text, const std::filesystem::path& base_dir = {}) {
  using namespace scene_io_detail;
  SceneDescription desc;
  try {
    const json doc = json::parse(text);

    if (doc.contains("camera")) {
      const json& c = doc["camera"];
      if (c.contains("position")) desc.camera.position = read_vec3(c["position"], "camera position");
      if (c.contains("look_at")) desc.camera.look_at = read_vec3(c["look_at"], "camera look_at");
      if (c.contains("up")) desc.camera.up = read_vec3(c["up"], "camera up");
      desc.camera.vfov_degrees = c.value("fov", desc.camera.vfov_degrees);
      desc.camera.width = c.value("width", desc.camera.width);
      desc.camera.height = c.value("height", desc.camera.height);
    }
    if (doc.contains("settings")) {
      desc.max_depth = doc["settings"].value("max_depth", desc.max_depth);
      desc.ray_epsilon = doc["settings"].value("ray_epsilon", desc.ray_epsilon);
    }

    for (const json& m : doc.at("materials")) {
      Material mat;
      mat.name = m.at("name").get<std::string>();
      if (m.contains("albedo")) mat.albedo = read_rgb(m["albedo"], "albedo");
      if (m.contains("emission")) mat.emission = read_rgb(m["emission"], "emission");
      const std::string kind = m.value("kind", "lambertian");
      if (kind == "lambertian") {
        mat.kind = MaterialKind::lambertian;
      } else if (kind == "mirror") {
        mat.kind = MaterialKind::mirror;
      } else {
        throw ConfigError("unknown material kind '" + kind + "'");
      }
      desc.materials.push_back(mat);
    }

    for (const json& p : doc.at("primitives")) {
      const std::string type = p.at("type").get<std::string>();
      PrimitiveDesc base;
      base.material = p.at("material").get<std::string>();
      base.dynamic = p.value("dynamic", false);
      base.id = p.value("id", std::string{});
      if (type == "sphere") {
        base.shape = Sphere{read_vec3(p.at("center"), "sphere center"), p.at("radius").get<double>()};
        desc.primitives.push_back(base);
      } else if (type == "triangle" || type == "quad") {
        std::vector<Vec3> v;
        for (const json& vj : p.at("vertices")) v.push_back(read_vec3(vj, "vertex"));
        const std::size_t expected = type == "triangle" ? 3 : 4;
        if (v.size() != expected) throw ConfigError(type + " needs " + std::to_string(expected) + " vertices");
        std::vector<Vec3> n;
        if (p.contains("normals")) {
          for (const json& nj : p["normals"]) n.push_back(normalize(read_vec3(nj, "normal")));
          if (n.size() != expected) throw ConfigError(type + " normals must match its vertices");
        }
        const auto emit = [&](std::size_t a, std::size_t b, std::size_t c) {
          Triangle tri{{v[a], v[b], v[c]}, std::nullopt};
          if (!n.empty()) tri.normals = std::array<Vec3, 3>{n[a], n[b], n[c]};
          PrimitiveDesc prim = base;
          prim.shape = tri;
          desc.primitives.push_back(prim);
        };
        emit(0, 1, 2);
        if (type == "quad") emit(0, 2, 3);
      } else {
        throw ConfigError("unknown primitive type '" + type + "'");
      }
    }

    if (doc.contains("light_states")) {
      const json& ls = doc["light_states"];
      if (ls.contains("static")) desc.static_overrides = read_overrides(ls["static"]);
      if (ls.contains("dynamic")) desc.dynamic_overrides = read_overrides(ls["dynamic"]);
    }

    if (doc.contains("environment")) {
      const json& env = doc["environment"];
      if (env.contains("static") || env.contains("dynamic")) {
        if (env.contains("static")) desc.env_static = read_environment(env["static"], base_dir);
        if (env.contains("dynamic")) desc.env_dynamic = read_environment(env["dynamic"], base_dir);
      } else {
        desc.env_static = read_environment(env, base_dir);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene file: ") + e.what());
  }
  return desc;
}

/// Resolves a scene path: as given, else relative to $DELTAPATH_SCENE_DIR.
inline std::filesystem::path resolve_scene_path(const std::string& path) {
  std::filesystem::path p(path);
  if (std::filesystem::exists(p)) return p;
  if (const char* dir = std::getenv("DELTAPATH_SCENE_DIR")) {
    std::filesystem::path candidate = std::filesystem::path(dir) / p;
    if (std::filesystem::exists(candidate)) return candidate;
    candidate += ".json";
    if (std::filesystem::exists(candidate)) return candidate;
  }
  throw ConfigError("scene file '" + path + "' not found");
}

inline SceneDescription load_scene(const std::string& path) {
  const std::filesystem::path resolved = resolve_scene_path(path);
  std::ifstream in(resolved);
  if (!in) throw ConfigError("cannot read scene file '" + resolved.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_scene(buffer.str(), resolved.parent_path());
}

}  // namespace deltapath
