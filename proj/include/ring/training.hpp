#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "ring/core.hpp"
#include "ring/dataset.hpp"
#include "ring/model.hpp"

namespace ring {

enum class CtfMode { off, discrete, continuous };

// Linear coarse-to-fine LOD cap: l = l0 + n / n_ctf, clamped to max_l.
struct CtfSchedule {
  CtfMode mode = CtfMode::continuous;
  double l0 = 0.5;
  double n_ctf = 1.0;  // steps per LOD unit
  double max_l = 1e30;

  void validate() const {
    if (!(n_ctf > 0.0)) throw std::invalid_argument("ctf schedule: n_ctf must be > 0");
    if (l0 < 0.0) throw std::invalid_argument("ctf schedule: l0 must be >= 0");
  }
};

inline double ctf_cap(const CtfSchedule& s, int64_t n) {
  if (n < 0) throw std::invalid_argument("ctf_cap: negative step");
  switch (s.mode) {
    case CtfMode::off: return s.max_l;
    case CtfMode::discrete: return std::min(s.l0 + std::floor(double(n) / s.n_ctf), s.max_l);
    case CtfMode::continuous: return std::min(s.l0 + double(n) / s.n_ctf, s.max_l);
  }
  return s.max_l;
}

struct LossConfig {
  double w_rgb = 1.0;
  double w_eikonal = 0.1;  // sdf mode only
  double w_occ = 0.01;     // density mode, penalizes the first occ_m samples
  int occ_m = 10;

  void validate() const {
    if (w_rgb < 0.0 || w_eikonal < 0.0 || w_occ < 0.0) throw std::invalid_argument("loss weights must be >= 0");
    if (occ_m < 0) throw std::invalid_argument("occ_m must be >= 0");
  }
};

// Mean over rays of the squared color error, summed over channels.
inline double rgb_loss(std::span<const Vec3> pred, std::span<const Vec3> gt) {
  if (pred.size() != gt.size()) throw std::invalid_argument("rgb_loss: length mismatch");
  double s = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) s += dot(pred[i] - gt[i], pred[i] - gt[i]);
  return s / double(pred.size());
}

// Mean of (||grad sdf|| - 1)^2 over the given gradient norms.
inline double eikonal_loss(std::span<const double> grad_norms) {
  if (grad_norms.empty()) return 0.0;
  double s = 0.0;
  for (double n : grad_norms) s += sqr(n - 1.0);
  return s / double(grad_norms.size());
}

// Mean density over the first M samples of each ray.
inline double occlusion_loss(std::span<const std::vector<double>> densities_per_ray, int m) {
  if (m == 0 || densities_per_ray.empty()) return 0.0;
  double s = 0.0;
  for (const auto& ray : densities_per_ray) {
    if (m > int(ray.size())) throw std::invalid_argument("occlusion_loss: M exceeds samples per ray");
    double r = 0.0;
    for (int i = 0; i < m; ++i) r += ray[i];
    s += r / m;
  }
  return s / double(densities_per_ray.size());
}

// ---------------------------------------------------------------------------
// Parameter registry: flat views over every learnable array, grouped the way
// freezing and the gradient checker address them.

struct ParamGroup {
  std::string name;
  double* data = nullptr;
  size_t size = 0;
  int grid_level = -1;  // >= 0 for grid groups
};

inline std::vector<ParamGroup> collect_params(Model& m) {
  std::vector<ParamGroup> groups;
  for (int i = 0; i < m.grid.num_levels(); ++i) {
    auto& lvl = m.grid.levels[i];
    groups.push_back({"grid.level" + std::to_string(i), lvl.values.data(), lvl.values.size(), i});
  }
  auto add = [&](const char* name, std::vector<double>& v) {
    groups.push_back({name, v.data(), v.size(), -1});
  };
  add("decoder.w_rff", m.decoder.w_rff);
  add("decoder.head_w", m.decoder.head_w);
  add("decoder.head_b", m.decoder.head_b);
  add("decoder.w1", m.decoder.w1);
  add("decoder.b1", m.decoder.b1);
  add("decoder.w2", m.decoder.w2);
  add("decoder.b2", m.decoder.b2);
  add("decoder.w3", m.decoder.w3);
  add("decoder.b3", m.decoder.b3);
  if (m.mode() == FieldMode::sdf) groups.push_back({"neus.log_s", &m.neus.log_s, 1, -1});
  return groups;
}

// Optimizer and gradient state. Group order matches collect_params; grid
// level freezing lives on the DeviationGrid itself, decoder/neus freezing
// here.
struct TrainState {
  Model model;
  int64_t step = 0;
  bool decoder_frozen = false;
  bool neus_frozen = false;

  struct GroupBuf {
    std::vector<double> grad, m, v;
    int64_t t = 0;  // per-group bias-correction step
  };
  std::vector<GroupBuf> opt;

  void rebuild_opt() {
    auto groups = collect_params(model);
    opt.assign(groups.size(), {});
    for (size_t i = 0; i < groups.size(); ++i) {
      opt[i].grad.assign(groups[i].size, 0.0);
      opt[i].m.assign(groups[i].size, 0.0);
      opt[i].v.assign(groups[i].size, 0.0);
    }
  }

  bool group_frozen(const ParamGroup& g) const {
    if (g.grid_level >= 0) return model.grid.levels[g.grid_level].frozen;
    if (g.name.rfind("neus.", 0) == 0) return neus_frozen;
    return decoder_frozen;
  }
};

inline TrainState make_train_state(Model model) {
  TrainState st;
  st.model = std::move(model);
  st.rebuild_opt();
  return st;
}

// ---------------------------------------------------------------------------
// Batch forward/backward. Each ray is processed end to end (its tape lives
// only for the duration of the ray), with gradients accumulated into
// per-worker sinks that are merged in fixed order afterwards.

struct RayBatch {
  struct Entry {
    Ray ray;
    Vec3 gt;
    uint64_t jitter_seed = 0;
    bool eikonal = false;
    int view = -1, row = -1, col = -1;  // provenance for diagnostics
  };
  std::vector<Entry> entries;
  double lod_cap = 1e30;
  double footprint_c = 0.0;
  int samples_per_ray = 32;
  bool jitter = true;
};

struct LossSums {
  double rgb = 0.0;      // sum over rays of squared error
  double eik = 0.0;      // sum over eikonal points of (|g|-1)^2
  double occ = 0.0;      // sum over rays of mean density of first M samples
  size_t n_rays = 0;
  size_t n_eik_points = 0;
  bool finite = true;

  double rgb_mean() const { return n_rays ? rgb / double(n_rays) : 0.0; }
  double eik_mean() const { return n_eik_points ? eik / double(n_eik_points) : 0.0; }
  double occ_mean() const { return n_rays ? occ / double(n_rays) : 0.0; }
  double total(const LossConfig& lc) const {
    return lc.w_rgb * rgb_mean() + lc.w_eikonal * eik_mean() + lc.w_occ * occ_mean();
  }
};

namespace detail {

struct GradSink {
  DecoderGrads dec;
  double dlog_s = 0.0;
  std::vector<std::vector<double>> grid;  // per level; empty when not accumulated

  void init(const Model& m, int active_top) {
    dec.init(m.decoder);
    dlog_s = 0.0;
    grid.assign(m.grid.num_levels(), {});
    for (int i = 0; i <= active_top && i < m.grid.num_levels(); ++i)
      if (!m.grid.levels[i].frozen) grid[i].assign(m.grid.levels[i].values.size(), 0.0);
  }
};

struct RayWorkspace {
  std::vector<ConeSample> samples;
  std::vector<double> sh;
  std::vector<double> feature;
  std::vector<double> geom, dts, ts;
  std::vector<Vec3> colors;
  std::vector<Vec3> xs;  // contracted coords
  std::vector<DecodeTape> tapes;
  std::vector<double> dalpha, dgeom;
  std::vector<Vec3> dcolors;
  std::vector<double> dfeature;
  DecodeTape probe_tape;
  DecodeScratch scratch;
};

inline void scatter_grid_grad(const Model& m, GradSink& sink, const Vec3& x, double lod,
                              std::span<const double> dfeature) {
  LevelBlend blend = level_blend(m.grid, lod);
  int fd = m.grid.feature_dim;
  for (int i = 0; i <= blend.top; ++i) {
    if (sink.grid[i].empty()) continue;
    CellCorners cc = cell_corners(m.grid.levels[i], fd, x);
    double scale = (i == blend.top) ? blend.top_weight : 1.0;
    double* g = sink.grid[i].data();
    for (int k = 0; k < 8; ++k) {
      double w = scale * cc.weight[k];
      double* dst = g + cc.index[k];
      for (int f = 0; f < fd; ++f) dst[f] += w * dfeature[f];
    }
  }
}

// SDF value and (optionally) its parameter gradient at an arbitrary point,
// used by the eikonal finite differences.
inline double sdf_probe(const Model& m, const Vec3& p, double lod, RayWorkspace& ws) {
  ws.feature.resize(m.grid.feature_dim);
  LodQuery q{contract(m.contraction, p), lod};
  feature_at_into(m.grid, q, ws.feature);
  return decode_geometry_raw(m.decoder, ws.feature, ws.probe_tape, ws.scratch);
}

inline void sdf_probe_backward(const Model& m, const Vec3& p, double lod, double dsdf, GradSink& sink,
                               RayWorkspace& ws) {
  ws.feature.resize(m.grid.feature_dim);
  Vec3 x = contract(m.contraction, p);
  LodQuery q{x, lod};
  feature_at_into(m.grid, q, ws.feature);
  decode_geometry_raw(m.decoder, ws.feature, ws.probe_tape, ws.scratch);
  ws.dfeature.assign(m.grid.feature_dim, 0.0);
  decode_backward(m.decoder, ws.probe_tape, {}, dsdf, Vec3{}, sink.dec, ws.dfeature, ws.scratch);
  scatter_grid_grad(m, sink, x, lod, ws.dfeature);
}

// Forward (and optionally backward) pass of one ray. Returns false if any
// produced value is non-finite.
inline bool process_ray(const Model& m, const RayBatch& batch, const RayBatch::Entry& entry,
                        const LossConfig& lc, double eik_h, size_t n_eik_points, GradSink* sink,
                        RayWorkspace& ws, LossSums& sums) {
  ws.samples = stratified_samples(entry.ray, batch.samples_per_ray, batch.jitter, entry.jitter_seed);
  resolve_lods(ws.samples, m.lod, m.contraction, batch.footprint_c, std::min(batch.lod_cap, m.grid.top_lod()));
  size_t n = ws.samples.size();

  ws.sh.resize(sh_basis_size(m.decoder.sh_degree));
  sh_encode_into(entry.ray.direction, m.decoder.sh_degree, ws.sh);

  ws.feature.resize(m.grid.feature_dim);
  ws.geom.resize(n); ws.dts.resize(n); ws.ts.resize(n);
  ws.colors.resize(n); ws.xs.resize(n);
  ws.tapes.resize(n);
  for (size_t i = 0; i < n; ++i) {
    ws.xs[i] = contract(m.contraction, ws.samples[i].position);
    LodQuery q{ws.xs[i], ws.samples[i].lod};
    feature_at_into(m.grid, q, ws.feature);
    FieldSample fs = decode_with_sh(m.decoder, ws.feature, ws.sh, ws.tapes[i], ws.scratch);
    ws.geom[i] = fs.geometry;
    ws.colors[i] = fs.color;
    ws.dts[i] = ws.samples[i].dt;
    ws.ts[i] = ws.samples[i].t;
  }

  CompositeResult cr = composite(ws.geom, ws.colors, ws.dts, ws.ts, m.mode(), &m.neus, m.background);
  Vec3 err = cr.color - entry.gt;
  double ray_rgb = dot(err, err);
  sums.rgb += ray_rgb;

  // occlusion regularizer on the first samples: raw density in density mode,
  // per-sample alpha in sdf mode (the density analogue there)
  double ray_occ = 0.0;
  int occ_m = 0;
  if (lc.w_occ > 0.0 && lc.occ_m > 0) {
    occ_m = std::min<int>(lc.occ_m, int(n));
    for (int i = 0; i < occ_m; ++i)
      ray_occ += m.mode() == FieldMode::density ? ws.geom[i] : cr.alphas[i];
    ray_occ /= occ_m;
    sums.occ += ray_occ;
  }

  if (!std::isfinite(ray_rgb) || !std::isfinite(ray_occ)) return false;

  std::vector<Vec3> eik_grads;
  if (m.mode() == FieldMode::sdf && entry.eikonal && lc.w_eikonal > 0.0 && n_eik_points > 0) {
    eik_grads.resize(n);
    for (size_t i = 0; i < n; ++i) {
      Vec3 g;
      for (int a = 0; a < 3; ++a) {
        Vec3 e;
        e[a] = eik_h;
        double s_plus = sdf_probe(m, ws.samples[i].position + e, ws.samples[i].lod, ws);
        double s_minus = sdf_probe(m, ws.samples[i].position - e, ws.samples[i].lod, ws);
        g[a] = (s_plus - s_minus) / (2.0 * eik_h);
      }
      eik_grads[i] = g;
      double gn = norm(g);
      if (!std::isfinite(gn)) return false;
      sums.eik += sqr(gn - 1.0);
    }
  }

  if (!sink) return true;

  // reverse pass
  double inv_rays = 1.0 / double(sums.n_rays);
  Vec3 dcolor = (2.0 * lc.w_rgb * inv_rays) * err;
  ws.dalpha.assign(n, 0.0);
  ws.dcolors.assign(n, Vec3{});
  composite_backward(cr, ws.colors, m.background, dcolor, ws.dalpha, ws.dcolors);

  ws.dgeom.assign(n, 0.0);
  if (m.mode() == FieldMode::density) {
    for (size_t i = 0; i < n; ++i) {
      // alpha = 1 - exp(-sigma dt)
      ws.dgeom[i] = ws.dalpha[i] * ws.dts[i] * (1.0 - cr.alphas[i]);
    }
    if (occ_m > 0) {
      double docc = lc.w_occ * inv_rays / occ_m;
      for (int i = 0; i < occ_m; ++i) ws.dgeom[i] += docc;
    }
  } else {
    if (occ_m > 0) {
      double docc = lc.w_occ * inv_rays / occ_m;
      for (int i = 0; i < occ_m; ++i) ws.dalpha[i] += docc;
    }
    for (size_t i = 0; i + 1 < n; ++i) {
      if (ws.dalpha[i] == 0.0) continue;
      neus_alpha_backward(m.neus, ws.geom[i], ws.geom[i + 1], ws.dalpha[i], ws.dgeom[i], ws.dgeom[i + 1],
                          sink->dlog_s);
    }
  }

  ws.dfeature.resize(m.grid.feature_dim);
  for (size_t i = 0; i < n; ++i) {
    if (ws.dgeom[i] == 0.0 && ws.dcolors[i].x == 0.0 && ws.dcolors[i].y == 0.0 && ws.dcolors[i].z == 0.0)
      continue;
    std::fill(ws.dfeature.begin(), ws.dfeature.end(), 0.0);
    decode_backward(m.decoder, ws.tapes[i], ws.sh, ws.dgeom[i], ws.dcolors[i], sink->dec, ws.dfeature,
                    ws.scratch);
    scatter_grid_grad(m, *sink, ws.xs[i], ws.samples[i].lod, ws.dfeature);
  }

  if (!eik_grads.empty()) {
    double weik = lc.w_eikonal / double(n_eik_points);
    for (size_t i = 0; i < n; ++i) {
      double gn = norm(eik_grads[i]);
      if (gn < 1e-12) continue;
      Vec3 dgvec = (2.0 * weik * (gn - 1.0) / gn) * eik_grads[i];
      for (int a = 0; a < 3; ++a) {
        if (dgvec[a] == 0.0) continue;
        Vec3 e;
        e[a] = eik_h;
        double d = dgvec[a] / (2.0 * eik_h);
        sdf_probe_backward(m, ws.samples[i].position + e, ws.samples[i].lod, d, *sink, ws);
        sdf_probe_backward(m, ws.samples[i].position - e, ws.samples[i].lod, -d, *sink, ws);
      }
    }
  }
  return true;
}

}  // namespace detail

// Half the finest-cell world size: the default eikonal finite-difference step.
inline double default_eikonal_step(const Model& m) {
  int top_res = m.grid.levels.empty() ? m.lod.base_resolution : m.grid.levels.back().resolution;
  double cell_addressing = 1.0 / top_res;
  double world_per_addr = m.contraction.domain_half_extent / m.contraction.affine_scale();
  return 0.5 * cell_addressing * world_per_addr;
}

// Runs the whole batch: forward everywhere, backward into state.opt grads
// when do_backward. Per-worker sinks merge in fixed worker order.
inline LossSums batch_forward_backward(TrainState& state, const RayBatch& batch, const LossConfig& lc,
                                       bool do_backward, int threads, int ctf_active_top = 1 << 20,
                                       std::vector<size_t>* bad_rays = nullptr) {
  Model& m = state.model;
  size_t n = batch.entries.size();
  size_t n_eik_points = 0;
  if (m.mode() == FieldMode::sdf && lc.w_eikonal > 0.0)
    for (const auto& e : batch.entries)
      if (e.eikonal) n_eik_points += batch.samples_per_ray;

  double eik_h = default_eikonal_step(m);
  int active_top = std::min(ctf_active_top, m.grid.num_levels() - 1);

  int nworkers = std::max(1, std::min<int>(threads, int(n)));
  std::vector<detail::GradSink> sinks;
  if (do_backward) {
    sinks.resize(nworkers);
    for (auto& s : sinks) s.init(m, active_top);
  }
  std::vector<LossSums> partial(nworkers);
  std::vector<std::vector<size_t>> bad(nworkers);

  parallel_for(n, nworkers, [&](size_t begin, size_t end, int w) {
    detail::RayWorkspace ws;
    LossSums& sums = partial[w];
    sums.n_rays = n;  // so per-ray backward normalizes by the full batch
    for (size_t i = begin; i < end; ++i) {
      bool ok = detail::process_ray(m, batch, batch.entries[i], lc, eik_h, n_eik_points,
                                    do_backward ? &sinks[w] : nullptr, ws, sums);
      if (!ok) {
        sums.finite = false;
        bad[w].push_back(i);
      }
    }
  });

  LossSums total;
  total.n_rays = n;
  total.n_eik_points = n_eik_points;
  for (const auto& p : partial) {
    total.rgb += p.rgb;
    total.eik += p.eik;
    total.occ += p.occ;
    total.finite = total.finite && p.finite;
  }
  if (bad_rays)
    for (auto& b : bad)
      for (size_t i : b) bad_rays->push_back(i);

  if (do_backward) {
    auto groups = collect_params(m);
    for (size_t gi = 0; gi < groups.size(); ++gi) {
      const ParamGroup& g = groups[gi];
      auto& buf = state.opt[gi];
      if (state.group_frozen(g)) continue;
      std::vector<const double*> srcs;
      if (g.grid_level >= 0) {
        for (const auto& s : sinks)
          if (!s.grid[g.grid_level].empty()) srcs.push_back(s.grid[g.grid_level].data());
      } else if (g.name == "neus.log_s") {
        for (const auto& s : sinks) buf.grad[0] += s.dlog_s;
        continue;
      } else {
        for (const auto& s : sinks) {
          const std::vector<double>* src = nullptr;
          if (g.name == "decoder.w_rff") src = &s.dec.w_rff;
          else if (g.name == "decoder.head_w") src = &s.dec.head_w;
          else if (g.name == "decoder.head_b") src = &s.dec.head_b;
          else if (g.name == "decoder.w1") src = &s.dec.w1;
          else if (g.name == "decoder.b1") src = &s.dec.b1;
          else if (g.name == "decoder.w2") src = &s.dec.w2;
          else if (g.name == "decoder.b2") src = &s.dec.b2;
          else if (g.name == "decoder.w3") src = &s.dec.w3;
          else if (g.name == "decoder.b3") src = &s.dec.b3;
          srcs.push_back(src->data());
        }
      }
      // per-index sums, sink order fixed: identical for any thread count
      parallel_for(g.size, threads, [&](size_t begin, size_t end, int) {
        for (const double* src : srcs)
          for (size_t i = begin; i < end; ++i) buf.grad[i] += src[i];
      });
    }
  }
  return total;
}

// Standard Adam with bias correction. Frozen or ctf-masked groups get no
// update and their gradients are cleared.
inline void adam_step(TrainState& state, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8, int ctf_active_top = 1 << 20, int threads = 1) {
  auto groups = collect_params(state.model);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const ParamGroup& g = groups[gi];
    auto& buf = state.opt[gi];
    bool masked = state.group_frozen(g) || (g.grid_level >= 0 && g.grid_level > ctf_active_top);
    if (masked) {
      std::fill(buf.grad.begin(), buf.grad.end(), 0.0);
      continue;
    }
    buf.t += 1;
    double bc1 = 1.0 - std::pow(beta1, double(buf.t));
    double bc2 = 1.0 - std::pow(beta2, double(buf.t));
    parallel_for(g.size, threads, [&](size_t begin, size_t end, int) {
      for (size_t i = begin; i < end; ++i) {
        double grad = buf.grad[i];
        buf.m[i] = beta1 * buf.m[i] + (1.0 - beta1) * grad;
        buf.v[i] = beta2 * buf.v[i] + (1.0 - beta2) * grad * grad;
        double mhat = buf.m[i] / bc1;
        double vhat = buf.v[i] / bc2;
        g.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        buf.grad[i] = 0.0;
      }
    });
  }
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainViews {
  std::vector<Camera> cameras;
  std::vector<Image> images;

  size_t size() const { return cameras.size(); }
};

struct MetricsRow {
  int64_t step = 0;
  double loss_total = 0.0, loss_rgb = 0.0, loss_eik = 0.0, loss_occ = 0.0;
  double lod_cap = 0.0;
  double psnr_val = std::numeric_limits<double>::quiet_NaN();
};

struct TrainConfig {
  int64_t steps = 3000;
  int batch_rays = 1024;
  int samples_per_ray = 48;
  double lr = 1e-2;
  double lr_final = 1e-3;  // exponential decay target; <= 0 keeps lr constant
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  CtfSchedule ctf;
  LossConfig loss;
  uint64_t seed = 0;
  int threads = 1;
  bool jitter = true;
  int64_t val_every = 500;
  int eik_every = 4;  // eikonal probes on every k-th batch ray
  std::string metrics_path;  // CSV written here when non-empty
  std::string dump_dir;      // NaN diagnostics land here
  bool verbose = false;
};

struct TrainAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write metrics CSV: " + path);
  out << "step,loss_total,loss_rgb,loss_eik,loss_occ,lod_cap,psnr_val\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,", (long long)r.step, r.loss_total,
                  r.loss_rgb, r.loss_eik, r.loss_occ, r.lod_cap);
    out << buf;
    if (std::isfinite(r.psnr_val)) {
      std::snprintf(buf, sizeof(buf), "%.6f", r.psnr_val);
      out << buf;
    }
    out << "\n";
  }
}

inline double validation_psnr(const Model& m, const TrainViews& val, double lod_cap, int samples_per_ray,
                              int threads) {
  if (val.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  RenderSettings rs;
  rs.lod_cap = lod_cap;
  rs.samples_per_ray = samples_per_ray;
  rs.threads = threads;
  double acc = 0.0;
  for (size_t i = 0; i < val.size(); ++i) {
    RenderResult rr = render_image(m, val.cameras[i], rs);
    acc += psnr(rr.color, val.images[i]);
  }
  return acc / double(val.size());
}

inline RayBatch sample_batch(const Model& m, const TrainViews& views, const TrainConfig& cfg, int64_t step,
                             double cap) {
  RayBatch batch;
  batch.lod_cap = cap;
  batch.samples_per_ray = cfg.samples_per_ray;
  batch.jitter = cfg.jitter;
  batch.footprint_c = pixel_footprint(views.cameras.at(0));
  batch.entries.resize(cfg.batch_rays);
  Rng rng(cfg.seed, 0x62617463ULL ^ uint64_t(step));
  for (int k = 0; k < cfg.batch_rays; ++k) {
    auto& e = batch.entries[k];
    e.view = int(rng.uniform_index(views.size()));
    const Camera& cam = views.cameras[e.view];
    e.row = int(rng.uniform_index(cam.height));
    e.col = int(rng.uniform_index(cam.width));
    e.ray = ray_through(cam, e.col + 0.5, e.row + 0.5, m.t_near, m.t_far);
    e.gt = views.images[e.view].get(e.row, e.col);
    e.jitter_seed = splitmix64(cfg.seed ^ splitmix64(uint64_t(step) * 0x10001ULL + uint64_t(k)));
    e.eikonal = cfg.eik_every > 0 && (k % cfg.eik_every == 0);
  }
  return batch;
}

inline void dump_nan_batch(const TrainConfig& cfg, int64_t step, const RayBatch& batch,
                           const std::vector<size_t>& bad_rays, const LossSums& sums) {
  if (cfg.dump_dir.empty()) return;
  std::filesystem::create_directories(cfg.dump_dir);
  nlohmann::json j;
  j["step"] = step;
  j["loss_rgb_sum"] = sums.rgb;
  j["loss_eik_sum"] = sums.eik;
  j["loss_occ_sum"] = sums.occ;
  j["bad_rays"] = nlohmann::json::array();
  for (size_t i : bad_rays) {
    const auto& e = batch.entries[i];
    j["bad_rays"].push_back({{"index", i}, {"view", e.view}, {"row", e.row}, {"col", e.col},
                             {"gt", {e.gt.x, e.gt.y, e.gt.z}}});
  }
  std::ofstream out(std::filesystem::path(cfg.dump_dir) / ("nan_batch_step" + std::to_string(step) + ".json"));
  out << j.dump(2) << "\n";
}

// Step loop: sample rays jointly across all images, resolve LODs under the
// coarse-to-fine cap, forward, losses, backward, Adam. Grid levels above the
// cap stay zero and unoptimized until the cap reaches them.
inline std::vector<MetricsRow> train(TrainState& state, const TrainViews& train_views,
                                     const TrainViews* val_views, const TrainConfig& cfg) {
  if (train_views.size() == 0) throw std::invalid_argument("train: empty dataset");
  cfg.ctf.validate();
  cfg.loss.validate();
  Model& m = state.model;

  CtfSchedule sched = cfg.ctf;
  sched.max_l = std::min(sched.max_l, m.grid.top_lod());

  if (sched.mode != CtfMode::off) {
    int start_top = std::min<int>(int(std::ceil(ctf_cap(sched, state.step))), m.grid.num_levels() - 1);
    for (int i = start_top + 1; i < m.grid.num_levels(); ++i)
      std::fill(m.grid.levels[i].values.begin(), m.grid.levels[i].values.end(), 0.0);
  }

  std::vector<MetricsRow> rows;
  rows.reserve(size_t(cfg.steps - state.step));
  for (int64_t step = state.step; step < cfg.steps; ++step) {
    double cap = ctf_cap(sched, step);
    int active_top = std::min<int>(int(std::ceil(cap)), m.grid.num_levels() - 1);

    RayBatch batch = sample_batch(m, train_views, cfg, step, cap);
    std::vector<size_t> bad_rays;
    LossSums sums = batch_forward_backward(state, batch, cfg.loss, true, cfg.threads, active_top, &bad_rays);
    if (!sums.finite) {
      dump_nan_batch(cfg, step, batch, bad_rays, sums);
      throw TrainAbort("NaN loss at step " + std::to_string(step) + " (" + std::to_string(bad_rays.size()) +
                       " bad rays" + (cfg.dump_dir.empty() ? "" : ", dump in " + cfg.dump_dir) + ")");
    }

    double lr = cfg.lr;
    if (cfg.lr_final > 0.0 && cfg.steps > 1)
      lr = cfg.lr * std::pow(cfg.lr_final / cfg.lr, double(step) / double(cfg.steps - 1));
    adam_step(state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, active_top, cfg.threads);
    state.step = step + 1;

    MetricsRow row;
    row.step = step;
    row.loss_total = sums.total(cfg.loss);
    row.loss_rgb = sums.rgb_mean();
    row.loss_eik = sums.eik_mean();
    row.loss_occ = sums.occ_mean();
    row.lod_cap = cap;
    bool do_val = val_views && cfg.val_every > 0 && ((step + 1) % cfg.val_every == 0 || step + 1 == cfg.steps);
    if (do_val)
      row.psnr_val = validation_psnr(m, *val_views, cap, cfg.samples_per_ray, cfg.threads);
    rows.push_back(row);

    if (cfg.verbose && (step % 100 == 0 || step + 1 == cfg.steps)) {
      std::printf("step %6lld  loss %.6f  rgb %.6f  cap %.3f%s\n", (long long)step, row.loss_total,
                  row.loss_rgb, cap,
                  std::isfinite(row.psnr_val) ? ("  val " + std::to_string(row.psnr_val)).c_str() : "");
      std::fflush(stdout);
    }
  }
  if (!cfg.metrics_path.empty()) write_metrics_csv(cfg.metrics_path, rows);
  return rows;
}

}  // namespace ring
