#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ring/core.hpp"

namespace ring {

// Rigid camera-to-world transform. Camera looks along -Z in its own frame,
// image +X right, +Y down.
struct Pose {
  double rot[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  Vec3 trans;

  Vec3 rotate(const Vec3& v) const {
    return {rot[0][0] * v.x + rot[0][1] * v.y + rot[0][2] * v.z,
            rot[1][0] * v.x + rot[1][1] * v.y + rot[1][2] * v.z,
            rot[2][0] * v.x + rot[2][1] * v.y + rot[2][2] * v.z};
  }
  Vec3 rotate_inv(const Vec3& v) const {
    return {rot[0][0] * v.x + rot[1][0] * v.y + rot[2][0] * v.z,
            rot[0][1] * v.x + rot[1][1] * v.y + rot[2][1] * v.z,
            rot[0][2] * v.x + rot[1][2] * v.y + rot[2][2] * v.z};
  }
  Vec3 apply(const Vec3& p) const { return rotate(p) + trans; }
  Vec3 apply_inv(const Vec3& p) const { return rotate_inv(p - trans); }

  // ||R^T R - I||_inf
  double orthonormality_error() const {
    double err = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += rot[k][i] * rot[k][j];
        err = std::max(err, std::fabs(s - (i == j ? 1.0 : 0.0)));
      }
    return err;
  }
};

struct Camera {
  int width = 0, height = 0;
  double focal_x = 0.0, focal_y = 0.0;
  double cx = 0.0, cy = 0.0;
  Pose pose;  // camera to world

  void validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("camera: non-positive image size");
    if (!(focal_x > 0.0) || !(focal_y > 0.0)) throw std::invalid_argument("camera: focal must be positive");
    if (pose.orthonormality_error() >= 1e-6)
      throw std::invalid_argument("camera: pose rotation is not orthonormal");
  }
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit
  double t_near = 0.0, t_far = 0.0;
};

// One sample of the cast cone. `footprint_c` is the pixel side at unit
// distance; `lod` stays at the -1 sentinel until resolved.
struct ConeSample {
  Vec3 position;
  double t = 0.0;
  double dt = 0.0;
  double footprint_c = 0.0;
  double lod = -1.0;
};

// Side of the pixel square at distance 1 from the camera.
inline double pixel_footprint(const Camera& cam) {
  return 1.0 / cam.focal_x;
}

// Ray through continuous pixel coordinates (px, py); px = col + 0.5 hits the
// pixel center.
inline Ray ray_through(const Camera& cam, double px, double py, double t_near, double t_far) {
  Vec3 dir_cam{(px - cam.cx) / cam.focal_x, (py - cam.cy) / cam.focal_y, -1.0};
  Ray r;
  r.origin = cam.pose.trans;
  r.direction = normalized(cam.pose.rotate(dir_cam));
  r.t_near = t_near;
  r.t_far = t_far;
  return r;
}

// Projects a world point to pixel coordinates; throws if the point is not in
// front of the camera.
inline std::pair<double, double> project(const Camera& cam, const Vec3& p) {
  Vec3 q = cam.pose.apply_inv(p);
  if (!(q.z < 0.0)) throw std::invalid_argument("project: point behind camera");
  return {cam.cx + cam.focal_x * (q.x / -q.z), cam.cy + cam.focal_y * (q.y / -q.z)};
}

inline std::vector<Ray> generate_rays(const Camera& cam, const std::vector<std::pair<int, int>>& pixel_indices,
                                      double t_near, double t_far) {
  std::vector<Ray> rays;
  rays.reserve(pixel_indices.size());
  for (auto [row, col] : pixel_indices) {
    if (row < 0 || row >= cam.height || col < 0 || col >= cam.width)
      throw std::invalid_argument("generate_rays: pixel index out of bounds");
    rays.push_back(ray_through(cam, col + 0.5, row + 0.5, t_near, t_far));
  }
  return rays;
}

// n stratified samples over [t_near, t_far]. Bin k is [t_near + k*D, t_near +
// (k+1)*D]; with jitter off samples sit at bin centers, with jitter on they
// are uniform within the bin from the seeded stream. dt is the gap to the
// next sample (the last one uses the bin width).
inline std::vector<ConeSample> stratified_samples(const Ray& ray, int n, bool jitter, uint64_t rng_seed) {
  if (n < 1) throw std::invalid_argument("stratified_samples: n must be >= 1");
  double range = ray.t_far - ray.t_near;
  double bin = range / n;
  Rng rng(rng_seed);
  std::vector<ConeSample> out(n);
  for (int k = 0; k < n; ++k) {
    double u = jitter ? rng.uniform() : 0.5;
    out[k].t = ray.t_near + (k + u) * bin;
    out[k].position = ray.origin + out[k].t * ray.direction;
  }
  for (int k = 0; k + 1 < n; ++k) out[k].dt = out[k + 1].t - out[k].t;
  out[n - 1].dt = bin;
  return out;
}

}  // namespace ring
