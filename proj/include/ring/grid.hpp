#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ring/contraction.hpp"
#include "ring/core.hpp"

namespace ring {

// One learnable deviation grid: a dense vertex lattice of resolution^3
// F-vectors spanning [0,1]^3, layout [x][y][z][feature].
struct DeviationGrid {
  int resolution = 0;
  std::vector<double> values;
  bool frozen = false;
};

// Residual grid hierarchy: the latent at LOD L is the sum of the trilinearly
// interpolated deviations of all levels up to L, the topmost one weighted by
// the fractional part.
struct RingGrid {
  LodConfig cfg;
  int feature_dim = 0;
  std::vector<DeviationGrid> levels;

  int num_levels() const { return int(levels.size()); }
  double top_lod() const { return double(levels.size()) - 1.0; }
};

struct LodQuery {
  Vec3 x;         // contracted coords in [0,1]^3
  double lod = 0.0;
};

// Corner indices (into the value array, feature 0) and trilinear weights of
// the cell containing x. Out-of-range coordinates clamp to the boundary.
struct CellCorners {
  std::array<size_t, 8> index;
  std::array<double, 8> weight;
};

inline CellCorners cell_corners(const DeviationGrid& grid, int feature_dim, const Vec3& x) {
  int res = grid.resolution;
  double fx[3], ix[3];
  for (int a = 0; a < 3; ++a) {
    double u = std::clamp(x[a], 0.0, 1.0) * (res - 1);
    double i0 = std::floor(u);
    if (i0 > res - 2) i0 = res - 2;
    ix[a] = i0;
    fx[a] = u - i0;
  }
  CellCorners cc;
  size_t sx = size_t(res) * res * feature_dim;
  size_t sy = size_t(res) * feature_dim;
  size_t sz = feature_dim;
  size_t base = size_t(ix[0]) * sx + size_t(ix[1]) * sy + size_t(ix[2]) * sz;
  int k = 0;
  for (int dx = 0; dx < 2; ++dx)
    for (int dy = 0; dy < 2; ++dy)
      for (int dz = 0; dz < 2; ++dz, ++k) {
        cc.index[k] = base + dx * sx + dy * sy + dz * sz;
        cc.weight[k] = (dx ? fx[0] : 1.0 - fx[0]) * (dy ? fx[1] : 1.0 - fx[1]) * (dz ? fx[2] : 1.0 - fx[2]);
      }
  return cc;
}

inline void interp_level_into(const DeviationGrid& grid, int feature_dim, const Vec3& x,
                              std::span<double> out, double scale = 1.0) {
  CellCorners cc = cell_corners(grid, feature_dim, x);
  for (int k = 0; k < 8; ++k) {
    const double* v = grid.values.data() + cc.index[k];
    double w = scale * cc.weight[k];
    for (int f = 0; f < feature_dim; ++f) out[f] += w * v[f];
  }
}

inline std::vector<double> interp_level(const DeviationGrid& grid, int feature_dim, const Vec3& x) {
  std::vector<double> out(feature_dim, 0.0);
  interp_level_into(grid, feature_dim, x, out);
  return out;
}

// Contributing top level and its weight for a (possibly fractional) LOD.
// Integral LODs contribute their top level fully, which makes the blend
// continuous at integer boundaries from both sides.
struct LevelBlend {
  int top = 0;
  double top_weight = 1.0;
};

inline LevelBlend level_blend(const RingGrid& grid, double lod) {
  double l = std::clamp(lod, 0.0, grid.top_lod());
  double fl = std::floor(l);
  if (l == fl) return {int(fl), 1.0};
  return {int(fl) + 1, l - fl};
}

inline void feature_at_into(const RingGrid& grid, const LodQuery& q, std::span<double> out) {
  for (int f = 0; f < grid.feature_dim; ++f) out[f] = 0.0;
  LevelBlend blend = level_blend(grid, q.lod);
  for (int i = 0; i < blend.top; ++i) interp_level_into(grid.levels[i], grid.feature_dim, q.x, out);
  interp_level_into(grid.levels[blend.top], grid.feature_dim, q.x, out, blend.top_weight);
}

inline std::vector<double> feature_at(const RingGrid& grid, const LodQuery& q) {
  std::vector<double> out(grid.feature_dim, 0.0);
  feature_at_into(grid, q, out);
  return out;
}

inline RingGrid init_grid(const LodConfig& cfg, int feature_dim, double init_scale, uint64_t rng_seed,
                          int initial_levels = -1) {
  cfg.validate();
  if (feature_dim < 1) throw std::invalid_argument("init_grid: feature_dim must be >= 1");
  if (initial_levels < 0) initial_levels = cfg.num_levels;
  if (initial_levels > cfg.num_levels) throw std::invalid_argument("init_grid: more levels than capacity");
  RingGrid grid;
  grid.cfg = cfg;
  grid.feature_dim = feature_dim;
  Rng rng(rng_seed);
  for (int i = 0; i < initial_levels; ++i) {
    DeviationGrid level;
    level.resolution = cfg.level_resolution(i);
    level.values.resize(size_t(level.resolution) * level.resolution * level.resolution * feature_dim);
    for (auto& v : level.values) v = rng.uniform(-init_scale, init_scale);
    grid.levels.push_back(std::move(level));
  }
  return grid;
}

// Appends a zero-initialized level at the next resolution. Existing levels
// are untouched, so every evaluation at or below the old top stays
// bit-identical.
inline void add_level(RingGrid& grid) {
  if (grid.num_levels() >= grid.cfg.num_levels)
    throw std::invalid_argument("add_level: grid already at its configured maximum level count");
  DeviationGrid level;
  level.resolution = grid.cfg.level_resolution(grid.num_levels());
  level.values.assign(size_t(level.resolution) * level.resolution * level.resolution * grid.feature_dim, 0.0);
  grid.levels.push_back(std::move(level));
}

// Sparse gradient of feature_at w.r.t. the touched grid codes. Each
// contributing unfrozen level gets the upstream gradient distributed to the
// 8 corner codes of its cell with trilinear weights, scaled by the blend
// weight on the top fractional level; grad[8 * f + k] belongs to value index
// index[k] + f. Frozen levels accumulate nothing.
struct LevelGrad {
  int level = 0;
  std::array<size_t, 8> index;
  std::vector<double> grad;  // 8 * feature_dim, corner-major per feature
};

inline std::vector<LevelGrad> grad_feature_at(const RingGrid& grid, const LodQuery& q,
                                              std::span<const double> upstream) {
  std::vector<LevelGrad> grads;
  LevelBlend blend = level_blend(grid, q.lod);
  for (int i = 0; i <= blend.top; ++i) {
    if (grid.levels[i].frozen) continue;
    CellCorners cc = cell_corners(grid.levels[i], grid.feature_dim, q.x);
    LevelGrad g;
    g.level = i;
    g.index = cc.index;
    g.grad.resize(8 * grid.feature_dim);
    double scale = (i == blend.top) ? blend.top_weight : 1.0;
    for (int f = 0; f < grid.feature_dim; ++f)
      for (int k = 0; k < 8; ++k) g.grad[8 * f + k] = scale * cc.weight[k] * upstream[f];
    grads.push_back(std::move(g));
  }
  return grads;
}

}  // namespace ring
