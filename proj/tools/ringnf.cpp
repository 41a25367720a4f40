// Command-line surface for the residual-grid neural field pipeline:
// synth, train, render, eval, extend, lodviz, gradcheck.

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "ring/checkpoint.hpp"
#include "ring/dataset.hpp"
#include "ring/gradcheck.hpp"
#include "ring/model.hpp"
#include "ring/training.hpp"

namespace fs = std::filesystem;
using namespace ring;

namespace {

struct Flags {
  std::string scene, out = "out", ckpt, config_path, resume;
  uint64_t seed = 0;
  bool deterministic = false;
  int threads = 2;
  std::string mode = "density";
  int levels = 3;
  int b = 16;
  double f = 2.0;
  int feat_dim = 4;
  int rff_dim = 32;
  int color_feat_dim = 15;
  int hidden = 64;
  int sh_degree = 3;
  double init_scale = 1e-4;
  int64_t steps = 3000;
  int batch = 1024;
  int samples = 48;
  double lr = 1e-2;
  double lr_final = 1e-3;
  std::string ctf = "continuous";
  double l0 = 0.5;
  double n_ctf = -1.0;  // <0: reach the top cap at 30% of steps
  double lod_cap = 1e30;
  int scale = 1;
  int add = 2;
  std::string freeze = "none";
  double w_eik = 0.1;
  double w_occ = 0.01;
  int occ_m = 10;
  int views = 8;
  int res = 64;
  double ring_radius = 3.0;
  double sphere_radius = 1.0;
  int val_views = 0;
  int view = -1;
  bool force_max_lod = false;
  bool verbose = true;
};

// every stable flag registered on one subcommand
void register_flags(CLI::App* cmd, Flags& fl) {
  cmd->add_option("--scene", fl.scene, "scene directory (scene.json + images)");
  cmd->add_option("--out", fl.out, "output directory");
  cmd->add_option("--ckpt", fl.ckpt, "checkpoint file");
  cmd->add_option("--config", fl.config_path, "JSON config file (CLI flags take precedence)");
  cmd->add_option("--seed", fl.seed, "RNG seed");
  cmd->add_flag("--deterministic", fl.deterministic, "fixed-order reductions (always on in this build)");
  cmd->add_option("--threads", fl.threads, "worker threads");
  cmd->add_option("--mode", fl.mode, "field mode: density|sdf")->check(CLI::IsMember({"density", "sdf"}));
  cmd->add_option("--levels", fl.levels, "grid levels");
  cmd->add_option("--b", fl.b, "base grid resolution");
  cmd->add_option("--f", fl.f, "growth factor");
  cmd->add_option("--feat-dim", fl.feat_dim, "grid feature dim");
  cmd->add_option("--rff-dim", fl.rff_dim, "random fourier filter width");
  cmd->add_option("--color-feat-dim", fl.color_feat_dim, "color feature width");
  cmd->add_option("--hidden", fl.hidden, "color MLP hidden width");
  cmd->add_option("--sh-degree", fl.sh_degree, "spherical harmonics degree");
  cmd->add_option("--init-scale", fl.init_scale, "grid init scale");
  cmd->add_option("--steps", fl.steps, "training steps");
  cmd->add_option("--batch", fl.batch, "rays per step");
  cmd->add_option("--samples", fl.samples, "samples per ray");
  cmd->add_option("--lr", fl.lr, "learning rate");
  cmd->add_option("--lr-final", fl.lr_final, "exponential decay target (<=0 keeps lr constant)");
  cmd->add_option("--ctf", fl.ctf, "coarse-to-fine: off|discrete|continuous")
      ->check(CLI::IsMember({"off", "discrete", "continuous"}));
  cmd->add_option("--l0", fl.l0, "initial LOD cap");
  cmd->add_option("--n-ctf", fl.n_ctf, "steps per LOD unit (<0: reach top at 30% of steps)");
  cmd->add_option("--lod-cap", fl.lod_cap, "render LOD cap");
  cmd->add_option("--scale", fl.scale, "render at 1/scale resolution with footprint scaled");
  cmd->add_option("--add", fl.add, "levels to add (extend)");
  cmd->add_option("--freeze", fl.freeze, "freeze groups: all|none|grids")
      ->check(CLI::IsMember({"all", "none", "grids"}));
  cmd->add_option("--w-eik", fl.w_eik, "eikonal weight (sdf)");
  cmd->add_option("--w-occ", fl.w_occ, "occlusion weight");
  cmd->add_option("--occ-m", fl.occ_m, "occlusion sample count");
  cmd->add_option("--views", fl.views, "synth view count");
  cmd->add_option("--res", fl.res, "synth image resolution");
  cmd->add_option("--ring-radius", fl.ring_radius, "synth camera ring radius");
  cmd->add_option("--sphere-radius", fl.sphere_radius, "synth sphere radius");
  cmd->add_option("--val-views", fl.val_views, "held-out view count");
  cmd->add_option("--view", fl.view, "single view index (render/lodviz)");
  cmd->add_flag("--force-max-lod", fl.force_max_lod, "bypass distance-aware LOD (eval)");
  cmd->add_flag("!--quiet", fl.verbose, "suppress progress output");
}

// config file < CLI flag precedence, applied before defaults are read out
std::set<std::string> apply_config_file(CLI::App* cmd, Flags& fl) {
  std::set<std::string> from_config;
  if (fl.config_path.empty()) return from_config;
  std::ifstream in(fl.config_path);
  if (!in) throw std::runtime_error("cannot open config file " + fl.config_path);
  nlohmann::json j = nlohmann::json::parse(in);
  for (auto& [key, value] : j.items()) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt) throw std::runtime_error("unknown config key: " + key);
    if (opt->count() > 0) continue;  // explicit CLI flag wins
    std::string as_text = value.is_string() ? value.get<std::string>() : value.dump();
    opt->add_result(as_text);
    opt->run_callback();
    from_config.insert(opt->get_name());
  }
  return from_config;
}

void print_provenance(CLI::App* cmd, const Flags& fl, const std::set<std::string>& from_config) {
  if (!fl.verbose) return;
  std::printf("config (cli > config-file > default):\n");
  for (const CLI::Option* opt : cmd->get_options()) {
    if (opt->get_name().rfind("--", 0) != 0) continue;
    const char* origin = from_config.count(opt->get_name()) ? " (config)"
                         : opt->count()                     ? " (cli)"
                                                            : " (default)";
    std::printf("  %-18s %s%s\n", opt->get_name().c_str(),
                opt->count() ? opt->results()[0].c_str() : opt->get_default_str().c_str(), origin);
  }
}

ModelConfig model_config(const Flags& fl) {
  ModelConfig mc;
  mc.mode = fl.mode == "sdf" ? FieldMode::sdf : FieldMode::density;
  mc.base_resolution = fl.b;
  mc.growth_factor = fl.f;
  mc.num_levels = fl.levels;
  mc.feature_dim = fl.feat_dim;
  mc.rff_dim = fl.rff_dim;
  mc.color_feature_dim = fl.color_feat_dim;
  mc.hidden_dim = fl.hidden;
  mc.sh_degree = fl.sh_degree;
  mc.init_scale = fl.init_scale;
  return mc;
}

TrainConfig train_config(const Flags& fl, double top_lod) {
  TrainConfig tc;
  tc.steps = fl.steps;
  tc.batch_rays = fl.batch;
  tc.samples_per_ray = fl.samples;
  tc.lr = fl.lr;
  tc.lr_final = fl.lr_final;
  tc.loss.w_rgb = 1.0;
  tc.loss.w_eikonal = fl.w_eik;
  tc.loss.w_occ = fl.w_occ;
  tc.loss.occ_m = fl.occ_m;
  tc.seed = fl.seed;
  tc.threads = fl.threads;
  tc.verbose = fl.verbose;
  tc.ctf.mode = fl.ctf == "off" ? CtfMode::off : fl.ctf == "discrete" ? CtfMode::discrete : CtfMode::continuous;
  tc.ctf.l0 = fl.l0;
  tc.ctf.max_l = top_lod;
  tc.ctf.n_ctf = fl.n_ctf > 0.0 ? fl.n_ctf
                                : std::max(1.0, 0.3 * double(fl.steps) / std::max(0.5, top_lod - fl.l0));
  return tc;
}

struct SplitViews {
  TrainViews train, val;
};

SplitViews split_scene(const LoadedScene& loaded, int n_val) {
  SplitViews sv;
  auto val_idx = val_indices(loaded.scene.frames.size(), size_t(std::max(0, n_val)));
  for (size_t i = 0; i < loaded.scene.frames.size(); ++i) {
    bool is_val = std::find(val_idx.begin(), val_idx.end(), i) != val_idx.end();
    auto& dst = is_val ? sv.val : sv.train;
    dst.cameras.push_back(loaded.scene.camera(i));
    dst.images.push_back(loaded.images[i]);
  }
  return sv;
}

void apply_freeze(TrainState& st, const std::string& freeze) {
  if (freeze == "none") return;
  freeze_all_levels(st.model.grid);
  if (freeze == "all") {
    st.decoder_frozen = true;
    st.neus_frozen = true;
  }
}

int cmd_synth(const Flags& fl) {
  if (fl.views < 1) {
    std::fprintf(stderr, "usage error: --views must be >= 1\n");
    return 2;
  }
  if (fl.res < 2) {
    std::fprintf(stderr, "usage error: --res must be >= 2\n");
    return 2;
  }
  AnalyticScene sc;
  sc.radius = fl.sphere_radius;
  auto synth = synth_scene(sc, fl.views, fl.res, fl.ring_radius, fl.seed);
  save_scene(fl.out, synth.scene, synth.images);
  if (fl.verbose)
    std::printf("wrote %d views at %dx%d to %s\n", fl.views, fl.res, fl.res, fl.out.c_str());
  return 0;
}

int cmd_train(const Flags& fl) {
  if (fl.scene.empty()) {
    std::fprintf(stderr, "usage error: --scene is required\n");
    return 2;
  }
  LoadedScene loaded = load_scene(fl.scene);
  SplitViews sv = split_scene(loaded, fl.val_views);

  TrainState st = [&] {
    if (!fl.resume.empty()) {
      LoadedCheckpoint lc = load_checkpoint(fl.resume);
      TrainState s = make_train_state(std::move(lc.model));
      s.step = lc.step;
      std::string sidecar = fl.resume + ".state";
      if (fs::exists(sidecar)) {
        load_train_state(sidecar, s);
      } else if (fl.verbose) {
        std::printf("note: no sidecar %s; resuming from f32 parameters\n", sidecar.c_str());
      }
      return s;
    }
    Model m = make_model(model_config(fl), fl.seed);
    m.t_near = loaded.scene.t_near;
    m.t_far = loaded.scene.t_far;
    if (!loaded.scene.contraction) {
      m.contraction.mode = ContractionMode::identity;
      m.contraction.domain_half_extent = loaded.scene.aabb_half_extent;
    }
    return make_train_state(std::move(m));
  }();
  apply_freeze(st, fl.freeze);

  fs::create_directories(fl.out);
  TrainConfig tc = train_config(fl, st.model.grid.top_lod());
  tc.metrics_path = (fs::path(fl.out) / "metrics.csv").string();
  tc.dump_dir = fl.out;
  tc.val_every = sv.val.size() ? 500 : 0;

  train(st, sv.train, sv.val.size() ? &sv.val : nullptr, tc);

  std::string ck = (fs::path(fl.out) / "model.ringnf").string();
  save_checkpoint(ck, st.model, st.step);
  save_train_state(ck + ".state", st);
  if (fl.verbose) std::printf("checkpoint: %s\n", ck.c_str());
  return 0;
}

Camera scaled_camera(Camera cam, int scale) {
  cam.width /= scale;
  cam.height /= scale;
  cam.focal_x /= scale;
  cam.focal_y /= scale;
  cam.cx /= scale;
  cam.cy /= scale;
  return cam;
}

int cmd_render(const Flags& fl) {
  if (fl.ckpt.empty() || fl.scene.empty()) {
    std::fprintf(stderr, "usage error: --ckpt and --scene are required\n");
    return 2;
  }
  LoadedCheckpoint lc = load_checkpoint(fl.ckpt);
  LoadedScene loaded = load_scene(fl.scene);
  fs::create_directories(fl.out);
  RenderSettings rs;
  rs.lod_cap = fl.lod_cap;
  rs.samples_per_ray = fl.samples;
  rs.threads = fl.threads;
  rs.force_max_lod = fl.force_max_lod;
  double cap_for_name = std::min(fl.lod_cap, lc.model.grid.top_lod());
  for (size_t v = 0; v < loaded.scene.frames.size(); ++v) {
    if (fl.view >= 0 && int(v) != fl.view) continue;
    Camera cam = scaled_camera(loaded.scene.camera(v), fl.scale);
    RenderResult rr = render_image(lc.model, cam, rs);
    char name[128];
    std::snprintf(name, sizeof(name), "render_cap%.2f_view%03zu", cap_for_name, v);
    write_ppm((fs::path(fl.out) / (std::string(name) + ".ppm")).string(), rr.color);
    write_pgm16((fs::path(fl.out) / (std::string(name) + "_depth.pgm")).string(), rr.depth, cam.width,
                cam.height);
  }
  return 0;
}

int cmd_eval(const Flags& fl) {
  if (fl.ckpt.empty() || fl.scene.empty()) {
    std::fprintf(stderr, "usage error: --ckpt and --scene are required\n");
    return 2;
  }
  LoadedCheckpoint lc = load_checkpoint(fl.ckpt);
  LoadedScene loaded = load_scene(fl.scene);
  fs::create_directories(fl.out);
  RenderSettings rs;
  rs.lod_cap = fl.lod_cap;
  rs.samples_per_ray = fl.samples;
  rs.threads = fl.threads;
  rs.force_max_lod = fl.force_max_lod;

  nlohmann::json report;
  double psnr_sum = 0.0, mse_sum = 0.0;
  size_t n = loaded.scene.frames.size();
  for (size_t v = 0; v < n; ++v) {
    Camera cam = scaled_camera(loaded.scene.camera(v), fl.scale);
    RenderResult rr = render_image(lc.model, cam, rs);
    Image gt = fl.scale == 1 ? loaded.images[v] : downsample_box(loaded.images[v], fl.scale);
    double m = mse(rr.color, gt);
    double p = psnr(rr.color, gt);
    mse_sum += m;
    psnr_sum += p;
    report["views"].push_back({{"view", v}, {"mse", m}, {"psnr", p}});
    if (fl.verbose) std::printf("view %3zu  mse %.6f  psnr %.3f\n", v, m, p);
  }
  report["mean_mse"] = mse_sum / double(n);
  report["mean_psnr"] = psnr_sum / double(n);
  report["scale"] = fl.scale;
  report["force_max_lod"] = fl.force_max_lod;
  std::ofstream(fs::path(fl.out) / "eval.json") << report.dump(2) << "\n";
  if (fl.verbose)
    std::printf("mean mse %.6f  mean psnr %.3f\n", mse_sum / double(n), psnr_sum / double(n));
  return 0;
}

int cmd_extend(const Flags& fl) {
  if (fl.ckpt.empty() || fl.scene.empty()) {
    std::fprintf(stderr, "usage error: --ckpt and --scene are required\n");
    return 2;
  }
  if (fl.add < 1) {
    std::fprintf(stderr, "usage error: --add must be >= 1\n");
    return 2;
  }
  LoadedCheckpoint lc = load_checkpoint(fl.ckpt);
  LoadedScene loaded = load_scene(fl.scene);
  SplitViews sv = split_scene(loaded, fl.val_views);

  TrainState st = make_train_state(std::move(lc.model));
  apply_freeze(st, fl.freeze == "none" ? "all" : fl.freeze);
  extend_model(st.model, fl.add);
  st.rebuild_opt();

  fs::create_directories(fl.out);
  TrainConfig tc = train_config(fl, st.model.grid.top_lod());
  tc.ctf.mode = CtfMode::off;  // new levels train directly
  tc.metrics_path = (fs::path(fl.out) / "metrics.csv").string();
  tc.dump_dir = fl.out;
  tc.val_every = sv.val.size() ? 500 : 0;
  train(st, sv.train, sv.val.size() ? &sv.val : nullptr, tc);

  std::string ck = (fs::path(fl.out) / "model_extended.ringnf").string();
  save_checkpoint(ck, st.model, st.step);
  save_train_state(ck + ".state", st);
  if (fl.verbose) std::printf("extended checkpoint: %s\n", ck.c_str());
  return 0;
}

int cmd_lodviz(const Flags& fl) {
  if (fl.ckpt.empty() || fl.scene.empty()) {
    std::fprintf(stderr, "usage error: --ckpt and --scene are required\n");
    return 2;
  }
  LoadedCheckpoint lc = load_checkpoint(fl.ckpt);
  LoadedScene loaded = load_scene(fl.scene);
  fs::create_directories(fl.out);
  size_t v = fl.view >= 0 ? size_t(fl.view) : 0;
  Camera cam = loaded.scene.camera(v);
  RenderSettings rs;
  rs.samples_per_ray = fl.samples;
  rs.threads = fl.threads;
  for (int cap = 0; cap <= int(lc.model.grid.top_lod()); ++cap) {
    rs.lod_cap = cap;
    RenderResult rr = render_image(lc.model, cam, rs);
    char name[64];
    std::snprintf(name, sizeof(name), "lod_sweep_cap%d.ppm", cap);
    write_ppm((fs::path(fl.out) / name).string(), rr.color);
  }
  return 0;
}

int cmd_gradcheck(const Flags& fl) {
  bool ok = true;
  for (FieldMode mode : {FieldMode::density, FieldMode::sdf}) {
    GradcheckConfig gc;
    gc.mode = mode;
    gc.seed = fl.seed == 0 ? 7 : fl.seed;
    gc.verbose = fl.verbose;
    std::printf("gradcheck %s mode:\n", mode == FieldMode::density ? "density" : "sdf");
    GradcheckReport rep = gradcheck(gc);
    std::printf("  max rel err %.3e (%s[%zu]) -> %s\n", rep.max_rel_err, rep.worst_group.c_str(),
                rep.worst_index, rep.pass ? "pass" : "FAIL");
    ok = ok && rep.pass;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"residual multi-resolution grid neural fields, desk scale"};
  app.require_subcommand(1);

  Flags fl;
  std::string names[] = {"synth", "train", "render", "eval", "extend", "lodviz", "gradcheck"};
  std::map<std::string, CLI::App*> cmds;
  for (const auto& n : names) {
    cmds[n] = app.add_subcommand(n);
    register_flags(cmds[n], fl);
  }
  cmds["train"]->add_option("--resume", fl.resume, "resume from checkpoint (uses .state sidecar if present)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* active = app.get_subcommands().front();
  try {
    auto from_config = apply_config_file(active, fl);
    print_provenance(active, fl, from_config);
    if (active == cmds["synth"]) return cmd_synth(fl);
    if (active == cmds["train"]) return cmd_train(fl);
    if (active == cmds["render"]) return cmd_render(fl);
    if (active == cmds["eval"]) return cmd_eval(fl);
    if (active == cmds["extend"]) return cmd_extend(fl);
    if (active == cmds["lodviz"]) return cmd_lodviz(fl);
    if (active == cmds["gradcheck"]) return cmd_gradcheck(fl);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
