#pragma once

#include <string>
#include <vector>

#include "ring/checkpoint.hpp"
#include "ring/training.hpp"

namespace ring {

struct GradcheckConfig {
  FieldMode mode = FieldMode::density;
  uint64_t seed = 7;
  double tolerance = 1e-4;
  double fd_step = 1e-4;
  int params_per_group = 120;  // groups smaller than this are swept fully
  int rays = 4;
  int samples_per_ray = 6;
  bool verbose = false;
};

struct GradcheckReport {
  struct GroupResult {
    std::string name;
    size_t checked = 0;
    double max_rel_err = 0.0;
    size_t worst_index = 0;
  };
  std::vector<GroupResult> groups;
  double max_rel_err = 0.0;
  std::string worst_group;
  size_t worst_index = 0;
  bool pass = false;
};

namespace detail {

inline RayBatch gradcheck_batch(const Model& m, const GradcheckConfig& cfg) {
  RayBatch batch;
  batch.lod_cap = 1e30;
  batch.samples_per_ray = cfg.samples_per_ray;
  batch.jitter = true;
  batch.footprint_c = 1.0 / 24.0;
  Rng rng(cfg.seed, 0xfdbeefULL);
  for (int k = 0; k < cfg.rays; ++k) {
    RayBatch::Entry e;
    // rays from a ring of nearby origins, aimed at jittered targets near the
    // center so samples cover both contracted and interior space
    double a = rng.uniform(0.0, 2.0 * M_PI);
    Vec3 origin{2.5 * std::cos(a), 2.5 * std::sin(a), rng.uniform(-0.5, 0.5)};
    Vec3 target{rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3)};
    e.ray.origin = origin;
    e.ray.direction = normalized(target - origin);
    e.ray.t_near = m.t_near;
    e.ray.t_far = m.t_far;
    e.gt = {rng.uniform(), rng.uniform(), rng.uniform()};
    e.jitter_seed = rng.next_u64();
    e.eikonal = (k % 2 == 0);
    batch.entries.push_back(e);
  }
  return batch;
}

}  // namespace detail

// Central finite differences of the full training loss against the manual
// reverse-mode gradients, on a deliberately tiny randomized model. Every
// parameter group is sampled (fully when smaller than the per-group budget).
inline GradcheckReport gradcheck(const GradcheckConfig& cfg) {
  ModelConfig mc;
  mc.mode = cfg.mode;
  mc.base_resolution = 4;
  mc.num_levels = 2;
  mc.feature_dim = 4;
  mc.rff_dim = 32;
  mc.color_feature_dim = 7;
  mc.hidden_dim = 16;
  mc.sh_degree = 2;
  mc.init_scale = 0.1;
  mc.contract = true;
  mc.t_near = 0.5;
  mc.t_far = 4.0;
  Model model = make_model(mc, cfg.seed);
  model.neus.log_s = std::log(3.0);

  LossConfig lc;
  lc.w_rgb = 1.0;
  lc.w_eikonal = cfg.mode == FieldMode::sdf ? 0.1 : 0.0;
  lc.w_occ = 0.01;  // density penalty in density mode, alpha penalty in sdf mode
  lc.occ_m = 3;

  TrainState state = make_train_state(std::move(model));
  RayBatch batch = detail::gradcheck_batch(state.model, cfg);

  batch_forward_backward(state, batch, lc, true, 1);

  auto loss_at = [&]() {
    return batch_forward_backward(state, batch, lc, false, 1).total(lc);
  };

  auto groups = collect_params(state.model);
  GradcheckReport report;
  Rng pick(cfg.seed, 0x70696b2ULL);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    GradcheckReport::GroupResult res;
    res.name = g.name;
    std::vector<size_t> indices;
    if (int(g.size) <= cfg.params_per_group) {
      for (size_t i = 0; i < g.size; ++i) indices.push_back(i);
    } else {
      for (int i = 0; i < cfg.params_per_group; ++i) indices.push_back(pick.uniform_index(g.size));
    }
    for (size_t idx : indices) {
      double saved = g.data[idx];
      double h = cfg.fd_step;
      g.data[idx] = saved + h;
      double lp = loss_at();
      g.data[idx] = saved - h;
      double lm = loss_at();
      g.data[idx] = saved;
      double fd = (lp - lm) / (2.0 * h);
      double an = state.opt[gi].grad[idx];
      double denom = std::max({std::fabs(fd), std::fabs(an), 1e-6});
      double rel = std::fabs(fd - an) / denom;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_index = idx;
      }
      ++res.checked;
    }
    if (cfg.verbose)
      std::printf("  %-18s checked %4zu  max rel err %.3e\n", res.name.c_str(), res.checked, res.max_rel_err);
    if (res.max_rel_err > report.max_rel_err) {
      report.max_rel_err = res.max_rel_err;
      report.worst_group = res.name;
      report.worst_index = res.worst_index;
    }
    report.groups.push_back(res);
  }
  report.pass = report.max_rel_err <= cfg.tolerance;
  return report;
}

}  // namespace ring
