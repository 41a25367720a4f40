#pragma once

#include <limits>
#include <string>
#include <vector>

#include "ring/contraction.hpp"
#include "ring/core.hpp"
#include "ring/decoder.hpp"
#include "ring/geometry.hpp"
#include "ring/grid.hpp"
#include "ring/image.hpp"
#include "ring/rendering.hpp"

namespace ring {

// Full scene representation: residual grid hierarchy + decoder + the forward
// mapping configuration that ties them together.
struct Model {
  LodConfig lod;
  ContractionMap contraction;
  RingGrid grid;
  DecoderParams decoder;
  NeusParams neus;
  Vec3 background{1.0, 1.0, 1.0};
  double t_near = 0.5, t_far = 6.0;

  FieldMode mode() const { return decoder.mode; }
};

struct ModelConfig {
  FieldMode mode = FieldMode::density;
  int base_resolution = 16;
  double growth_factor = 2.0;
  int num_levels = 3;
  int feature_dim = 4;
  int rff_dim = 32;
  int color_feature_dim = 15;
  int hidden_dim = 64;
  int sh_degree = 3;
  double init_scale = 1e-4;
  bool contract = true;
  double domain_half_extent = 1.0;
  bool supplement_lod_variant = false;
  Vec3 background{1.0, 1.0, 1.0};
  double t_near = 0.5, t_far = 6.0;
};

inline Model make_model(const ModelConfig& cfg, uint64_t seed) {
  Model m;
  m.lod.base_resolution = cfg.base_resolution;
  m.lod.growth_factor = cfg.growth_factor;
  m.lod.num_levels = cfg.num_levels;
  m.lod.supplement_variant = cfg.supplement_lod_variant;
  m.lod.validate();
  m.contraction.mode = cfg.contract ? ContractionMode::linf_contract : ContractionMode::identity;
  m.contraction.domain_half_extent = cfg.domain_half_extent;
  m.contraction.validate();
  m.grid = init_grid(m.lod, cfg.feature_dim, cfg.init_scale, splitmix64(seed ^ 0x67726964ULL));
  m.decoder = init_decoder(cfg.feature_dim, cfg.rff_dim, cfg.color_feature_dim, cfg.hidden_dim,
                           cfg.sh_degree, cfg.mode, splitmix64(seed ^ 0x6465636fULL));
  m.background = cfg.background;
  m.t_near = cfg.t_near;
  m.t_far = cfg.t_far;
  return m;
}

// Field evaluation of one resolved sample. Scratch buffers are caller-owned
// so render/training loops stay allocation-free per sample.
struct EvalScratch {
  std::vector<double> feature;
  DecodeTape tape;
  DecodeScratch scratch;
};

inline FieldSample eval_sample(const Model& m, const Vec3& position, double lod,
                               std::span<const double> sh, EvalScratch& scratch) {
  scratch.feature.resize(m.grid.feature_dim);
  LodQuery q{contract(m.contraction, position), lod};
  feature_at_into(m.grid, q, scratch.feature);
  return decode_with_sh(m.decoder, scratch.feature, sh, scratch.tape, scratch.scratch);
}

// Raises the level capacity and appends k zero-initialized grids. Existing
// levels and the decoder are untouched; callers freeze them when replaying
// the extension protocol.
inline void extend_model(Model& m, int k) {
  if (k < 1) throw std::invalid_argument("extend_model: k must be >= 1");
  m.lod.num_levels += k;
  m.grid.cfg = m.lod;
  for (int i = 0; i < k; ++i) add_level(m.grid);
}

inline void freeze_all_levels(RingGrid& grid, bool frozen = true) {
  for (auto& lvl : grid.levels) lvl.frozen = frozen;
}

struct RenderSettings {
  double lod_cap = std::numeric_limits<double>::infinity();
  int samples_per_ray = 48;
  bool force_max_lod = false;  // bypass distance-aware mapping
  int threads = 1;
};

struct RenderResult {
  Image color;
  std::vector<double> depth;
  std::vector<double> opacity;
};

// Renders a full image with per-sample distance-aware LOD (or a forced top
// LOD) and transmittance compositing. Deterministic: samples sit at bin
// centers and pixels are written independently.
inline RenderResult render_image(const Model& m, const Camera& cam, const RenderSettings& rs) {
  cam.validate();
  RenderResult out;
  out.color = Image(cam.width, cam.height);
  out.depth.assign(size_t(cam.width) * cam.height, 0.0);
  out.opacity.assign(size_t(cam.width) * cam.height, 0.0);
  double c = pixel_footprint(cam);
  double cap = std::min(rs.lod_cap, m.grid.top_lod());

  parallel_for(size_t(cam.width) * cam.height, rs.threads, [&](size_t begin, size_t end, int) {
    EvalScratch scratch;
    std::vector<double> sh(sh_basis_size(m.decoder.sh_degree));
    std::vector<double> geom, dts, ts;
    std::vector<Vec3> colors;
    for (size_t px = begin; px < end; ++px) {
      int row = int(px / cam.width);
      int col = int(px % cam.width);
      Ray ray = ray_through(cam, col + 0.5, row + 0.5, m.t_near, m.t_far);
      auto samples = stratified_samples(ray, rs.samples_per_ray, false, 0);
      if (rs.force_max_lod) {
        for (auto& s : samples) {
          s.footprint_c = c;
          s.lod = m.grid.top_lod();
        }
      } else {
        resolve_lods(samples, m.lod, m.contraction, c, cap);
      }
      sh_encode_into(ray.direction, m.decoder.sh_degree, sh);
      size_t n = samples.size();
      geom.resize(n); dts.resize(n); ts.resize(n); colors.resize(n);
      for (size_t i = 0; i < n; ++i) {
        FieldSample fs = eval_sample(m, samples[i].position, samples[i].lod, sh, scratch);
        geom[i] = fs.geometry;
        colors[i] = fs.color;
        dts[i] = samples[i].dt;
        ts[i] = samples[i].t;
      }
      CompositeResult cr = composite(geom, colors, dts, ts, m.mode(), &m.neus, m.background);
      out.color.set(row, col, cr.color);
      out.depth[px] = cr.depth;
      out.opacity[px] = cr.accumulated_opacity;
    }
  });
  return out;
}

}  // namespace ring
