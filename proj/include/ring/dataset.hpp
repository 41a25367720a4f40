#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ring/core.hpp"
#include "ring/geometry.hpp"
#include "ring/image.hpp"

namespace ring {

// Transforms-style scene description: shared pinhole intrinsics plus one
// camera-to-world matrix per frame. Pixel values are linear (no gamma).
struct SceneFile {
  int width = 0, height = 0;
  double fl_x = 0.0, fl_y = 0.0, cx = 0.0, cy = 0.0;
  bool contraction = true;
  double aabb_half_extent = 1.0;
  std::string mode_hint = "density";
  double t_near = 0.5, t_far = 6.0;
  struct Frame {
    std::string file_path;
    Pose transform;
  };
  std::vector<Frame> frames;

  Camera camera(size_t frame_idx) const {
    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.focal_x = fl_x;
    cam.focal_y = fl_y;
    cam.cx = cx;
    cam.cy = cy;
    cam.pose = frames.at(frame_idx).transform;
    cam.validate();
    return cam;
  }
};

// Desk-scale analytic ground truth: a Lambert-shaded sphere with a two-color
// octant checker, rendered in closed form.
struct AnalyticScene {
  Vec3 center{0.0, 0.0, 0.0};
  double radius = 1.0;
  Vec3 albedo_a{0.85, 0.25, 0.2};
  Vec3 albedo_b{0.2, 0.45, 0.85};
  Vec3 light_dir = normalized({0.5, 0.3, 0.8});
  double ambient = 0.3;
  double specular = 0.0;  // small view-dependent term, off by default
  Vec3 background{1.0, 1.0, 1.0};

  void validate() const {
    if (!(radius > 0.0)) throw std::invalid_argument("analytic scene: radius must be > 0");
  }
};

// Nearest positive ray-sphere intersection.
inline std::optional<double> ray_sphere(const Vec3& origin, const Vec3& dir, const Vec3& center,
                                        double radius) {
  Vec3 oc = origin - center;
  double b = dot(oc, dir);
  double c = dot(oc, oc) - radius * radius;
  double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  double sq = std::sqrt(disc);
  double t0 = -b - sq, t1 = -b + sq;
  if (t0 > 1e-9) return t0;
  if (t1 > 1e-9) return t1;
  return std::nullopt;
}

inline Vec3 shade_sphere_point(const AnalyticScene& scene, const Vec3& p, const Vec3& view_dir) {
  Vec3 n = normalized(p - scene.center);
  Vec3 rel = p - scene.center;
  bool parity = (rel.x > 0.0) ^ (rel.y > 0.0) ^ (rel.z > 0.0);
  Vec3 albedo = parity ? scene.albedo_a : scene.albedo_b;
  double lambert = std::max(0.0, dot(n, scene.light_dir));
  Vec3 c = albedo * (scene.ambient + (1.0 - scene.ambient) * lambert);
  if (scene.specular > 0.0) {
    Vec3 refl = 2.0 * dot(n, scene.light_dir) * n - scene.light_dir;
    double spec = std::pow(std::max(0.0, dot(refl, -view_dir)), 16.0);
    c += Vec3{1.0, 1.0, 1.0} * (scene.specular * spec);
  }
  return c;
}

inline Vec3 trace_analytic(const AnalyticScene& scene, const Vec3& origin, const Vec3& dir) {
  auto t = ray_sphere(origin, dir, scene.center, scene.radius);
  if (!t) return scene.background;
  return shade_sphere_point(scene, origin + *t * dir, dir);
}

// Supersampled closed-form render. The subpixel lattice has `supersample`
// points per pixel axis, so a render at half resolution with doubled
// supersampling averages exactly the same lattice.
inline Image render_analytic(const AnalyticScene& scene, const Camera& cam, int supersample = 4) {
  Image img(cam.width, cam.height);
  double inv = 1.0 / (supersample * supersample);
  for (int row = 0; row < cam.height; ++row)
    for (int col = 0; col < cam.width; ++col) {
      Vec3 acc;
      for (int j = 0; j < supersample; ++j)
        for (int i = 0; i < supersample; ++i) {
          double px = col + (i + 0.5) / supersample;
          double py = row + (j + 0.5) / supersample;
          Ray ray = ray_through(cam, px, py, 0.0, 1.0);
          acc += trace_analytic(scene, ray.origin, ray.direction);
        }
      img.set(row, col, acc * inv);
    }
  return img;
}

// Distance to the nearest sphere hit through the pixel center, or nothing
// for background pixels.
inline std::optional<double> analytic_depth(const AnalyticScene& scene, const Camera& cam, int row, int col) {
  if (row < 0 || row >= cam.height || col < 0 || col >= cam.width)
    throw std::invalid_argument("analytic_depth: pixel out of bounds");
  Ray ray = ray_through(cam, col + 0.5, row + 0.5, 0.0, 1.0);
  return ray_sphere(ray.origin, ray.direction, scene.center, scene.radius);
}

// Camera ring around the scene center at a fixed elevation, all looking at
// the center. The seed only rotates the starting phase.
inline Pose look_at_pose(const Vec3& eye, const Vec3& target, const Vec3& world_up = {0.0, 0.0, 1.0}) {
  Vec3 fwd = normalized(target - eye);
  Vec3 zc = -fwd;
  Vec3 xc = normalized(cross(fwd, world_up));
  Vec3 yc = cross(zc, xc);
  Pose pose;
  for (int i = 0; i < 3; ++i) {
    pose.rot[i][0] = xc[i];
    pose.rot[i][1] = yc[i];
    pose.rot[i][2] = zc[i];
  }
  pose.trans = eye;
  return pose;
}

struct SynthResult {
  SceneFile scene;
  std::vector<Image> images;
};

inline SynthResult synth_scene(const AnalyticScene& spec, int n_views, int resolution, double ring_radius,
                               uint64_t seed, int supersample = 4, double elevation = 0.4) {
  if (n_views < 1) throw std::invalid_argument("synth_scene: need at least one view");
  spec.validate();
  SynthResult out;
  SceneFile& sc = out.scene;
  sc.width = sc.height = resolution;
  sc.fl_x = sc.fl_y = resolution * 0.8;
  sc.cx = sc.cy = resolution / 2.0;
  sc.contraction = true;
  sc.mode_hint = "density";
  // sampling range bracketing the object from the ring
  sc.t_near = std::max(0.05, ring_radius - spec.radius - 1.0);
  sc.t_far = ring_radius + spec.radius + 1.0;

  Rng rng(seed);
  double phase = rng.uniform(0.0, 2.0 * M_PI / n_views);
  for (int v = 0; v < n_views; ++v) {
    double a = phase + 2.0 * M_PI * v / n_views;
    Vec3 eye = spec.center + ring_radius * Vec3{std::cos(a) * std::cos(elevation),
                                                std::sin(a) * std::cos(elevation), std::sin(elevation)};
    SceneFile::Frame frame;
    char name[64];
    std::snprintf(name, sizeof(name), "images/frame_%04d.ppm", v);
    frame.file_path = name;
    frame.transform = look_at_pose(eye, spec.center);
    sc.frames.push_back(frame);
    out.images.push_back(render_analytic(spec, sc.camera(v), supersample));
  }
  return out;
}

// Evenly spread held-out view indices.
inline std::vector<size_t> val_indices(size_t n_frames, size_t n_val) {
  std::vector<size_t> idx;
  for (size_t k = 0; k < n_val; ++k) idx.push_back(size_t((k + 0.5) * double(n_frames) / double(n_val)));
  return idx;
}

inline nlohmann::json scene_to_json(const SceneFile& sc) {
  nlohmann::json j;
  j["w"] = sc.width;
  j["h"] = sc.height;
  j["fl_x"] = sc.fl_x;
  j["fl_y"] = sc.fl_y;
  j["cx"] = sc.cx;
  j["cy"] = sc.cy;
  j["contraction"] = sc.contraction;
  j["aabb_half_extent"] = sc.aabb_half_extent;
  j["mode_hint"] = sc.mode_hint;
  j["t_near"] = sc.t_near;
  j["t_far"] = sc.t_far;
  j["frames"] = nlohmann::json::array();
  for (const auto& f : sc.frames) {
    nlohmann::json m = nlohmann::json::array();
    for (int r = 0; r < 4; ++r) {
      nlohmann::json row = nlohmann::json::array();
      for (int c = 0; c < 4; ++c) {
        if (r < 3 && c < 3) row.push_back(f.transform.rot[r][c]);
        else if (r < 3) row.push_back(f.transform.trans[r]);
        else row.push_back(c == 3 ? 1.0 : 0.0);
      }
      m.push_back(row);
    }
    j["frames"].push_back({{"file_path", f.file_path}, {"transform_matrix", m}});
  }
  return j;
}

inline SceneFile scene_from_json(const nlohmann::json& j) {
  SceneFile sc;
  sc.width = j.at("w").get<int>();
  sc.height = j.at("h").get<int>();
  sc.fl_x = j.at("fl_x").get<double>();
  sc.fl_y = j.at("fl_y").get<double>();
  sc.cx = j.at("cx").get<double>();
  sc.cy = j.at("cy").get<double>();
  sc.contraction = j.value("contraction", true);
  sc.aabb_half_extent = j.value("aabb_half_extent", 1.0);
  sc.mode_hint = j.value("mode_hint", std::string("density"));
  sc.t_near = j.value("t_near", 0.5);
  sc.t_far = j.value("t_far", 6.0);
  for (const auto& fj : j.at("frames")) {
    SceneFile::Frame f;
    f.file_path = fj.at("file_path").get<std::string>();
    const auto& m = fj.at("transform_matrix");
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) f.transform.rot[r][c] = m.at(r).at(c).get<double>();
      f.transform.trans[r] = m.at(r).at(3).get<double>();
    }
    sc.frames.push_back(f);
  }
  if (sc.frames.empty()) throw std::runtime_error("scene file has no frames");
  return sc;
}

inline void save_scene(const std::string& dir, const SceneFile& sc, const std::vector<Image>& images) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "images");
  std::ofstream out(fs::path(dir) / "scene.json");
  if (!out) throw std::runtime_error("save_scene: cannot write scene.json under " + dir);
  out << scene_to_json(sc).dump(2) << "\n";
  for (size_t i = 0; i < images.size(); ++i) write_ppm((fs::path(dir) / sc.frames[i].file_path).string(), images[i]);
}

struct LoadedScene {
  SceneFile scene;
  std::vector<Image> images;
};

inline LoadedScene load_scene(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::path json_path = fs::path(dir) / "scene.json";
  std::ifstream in(json_path);
  if (!in) throw std::runtime_error("load_scene: cannot open " + json_path.string());
  LoadedScene out;
  try {
    out.scene = scene_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    // e.byte carries the offset of the malformed token
    throw std::runtime_error("load_scene: parse error in " + json_path.string() + ": " + e.what());
  }
  for (const auto& f : out.scene.frames) out.images.push_back(read_ppm((fs::path(dir) / f.file_path).string()));
  return out;
}

}  // namespace ring
