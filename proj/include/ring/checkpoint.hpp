#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "ring/model.hpp"
#include "ring/training.hpp"

namespace ring {

static_assert(std::endian::native == std::endian::little, "checkpoint io assumes a little-endian host");

// Checkpoint layout: magic "RINGNF01", u64 length-prefixed UTF-8 JSON
// metadata (config, step, mode), then parameter sections in fixed order
// (grid levels, decoder matrices in declaration order, neus), each a u32
// rank + u32 dims header followed by row-major little-endian f32 data.
constexpr char kCheckpointMagic[8] = {'R', 'I', 'N', 'G', 'N', 'F', '0', '1'};
constexpr char kStateMagic[8] = {'R', 'I', 'N', 'G', 'S', 'T', '0', '1'};

namespace detail {

template <typename T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: unexpected end of file");
  return v;
}

inline void write_section(std::ostream& out, const std::vector<double>& data,
                          const std::vector<uint32_t>& dims) {
  size_t n = 1;
  for (uint32_t d : dims) n *= d;
  if (n != data.size()) throw std::logic_error("checkpoint: shape/data mismatch");
  write_pod<uint32_t>(out, uint32_t(dims.size()));
  for (uint32_t d : dims) write_pod<uint32_t>(out, d);
  std::vector<float> f(data.size());
  for (size_t i = 0; i < data.size(); ++i) f[i] = float(data[i]);
  out.write(reinterpret_cast<const char*>(f.data()), std::streamsize(f.size() * sizeof(float)));
}

inline std::vector<double> read_section(std::istream& in, const std::vector<uint32_t>& expect_dims) {
  uint32_t rank = read_pod<uint32_t>(in);
  if (rank != expect_dims.size()) throw std::runtime_error("checkpoint: unexpected section rank");
  size_t n = 1;
  for (uint32_t ed : expect_dims) {
    uint32_t d = read_pod<uint32_t>(in);
    if (d != ed) throw std::runtime_error("checkpoint: unexpected section shape");
    n *= d;
  }
  std::vector<float> f(n);
  in.read(reinterpret_cast<char*>(f.data()), std::streamsize(n * sizeof(float)));
  if (!in) throw std::runtime_error("checkpoint: truncated section data");
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = f[i];
  return out;
}

}  // namespace detail

inline nlohmann::json model_config_json(const Model& m, int64_t step) {
  nlohmann::json j;
  j["step"] = step;
  j["mode"] = m.mode() == FieldMode::density ? "density" : "sdf";
  j["num_levels"] = m.grid.num_levels();
  nlohmann::json c;
  c["base_resolution"] = m.lod.base_resolution;
  c["growth_factor"] = m.lod.growth_factor;
  c["max_levels"] = m.lod.num_levels;
  c["supplement_lod_variant"] = m.lod.supplement_variant;
  c["feature_dim"] = m.grid.feature_dim;
  c["rff_dim"] = m.decoder.rff_dim;
  c["color_feature_dim"] = m.decoder.color_feature_dim;
  c["hidden_dim"] = m.decoder.hidden_dim;
  c["sh_degree"] = m.decoder.sh_degree;
  c["contract"] = m.contraction.mode == ContractionMode::linf_contract;
  c["domain_half_extent"] = m.contraction.domain_half_extent;
  c["background"] = {m.background.x, m.background.y, m.background.z};
  c["t_near"] = m.t_near;
  c["t_far"] = m.t_far;
  j["config"] = c;
  return j;
}

inline void save_checkpoint(const std::string& path, const Model& m, int64_t step) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(kCheckpointMagic, 8);
  std::string meta = model_config_json(m, step).dump();
  detail::write_pod<uint64_t>(out, meta.size());
  out.write(meta.data(), std::streamsize(meta.size()));

  for (const auto& lvl : m.grid.levels) {
    uint32_t r = uint32_t(lvl.resolution);
    detail::write_section(out, lvl.values, {r, r, r, uint32_t(m.grid.feature_dim)});
  }
  const auto& d = m.decoder;
  uint32_t ho = uint32_t(d.head_out()), in = uint32_t(d.mlp_in()), h = uint32_t(d.hidden_dim);
  detail::write_section(out, d.w_rff, {uint32_t(d.rff_dim), uint32_t(d.feature_dim)});
  detail::write_section(out, d.head_w, {ho, uint32_t(d.rff_dim)});
  detail::write_section(out, d.head_b, {ho});
  detail::write_section(out, d.w1, {h, in});
  detail::write_section(out, d.b1, {h});
  detail::write_section(out, d.w2, {h, h});
  detail::write_section(out, d.b2, {h});
  detail::write_section(out, d.w3, {3, h});
  detail::write_section(out, d.b3, {3});
  detail::write_section(out, {m.neus.log_s}, {1});
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

struct LoadedCheckpoint {
  Model model;
  int64_t step = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  uint64_t meta_len = detail::read_pod<uint64_t>(in);
  std::string meta(meta_len, '\0');
  in.read(meta.data(), std::streamsize(meta_len));
  if (!in) throw std::runtime_error("load_checkpoint: truncated metadata in " + path);
  nlohmann::json j = nlohmann::json::parse(meta);
  const auto& c = j.at("config");

  ModelConfig cfg;
  cfg.mode = j.at("mode").get<std::string>() == "sdf" ? FieldMode::sdf : FieldMode::density;
  cfg.base_resolution = c.at("base_resolution").get<int>();
  cfg.growth_factor = c.at("growth_factor").get<double>();
  cfg.num_levels = c.at("max_levels").get<int>();
  cfg.supplement_lod_variant = c.value("supplement_lod_variant", false);
  cfg.feature_dim = c.at("feature_dim").get<int>();
  cfg.rff_dim = c.at("rff_dim").get<int>();
  cfg.color_feature_dim = c.at("color_feature_dim").get<int>();
  cfg.hidden_dim = c.at("hidden_dim").get<int>();
  cfg.sh_degree = c.at("sh_degree").get<int>();
  cfg.contract = c.at("contract").get<bool>();
  cfg.domain_half_extent = c.at("domain_half_extent").get<double>();
  auto bg = c.at("background");
  cfg.background = {bg.at(0).get<double>(), bg.at(1).get<double>(), bg.at(2).get<double>()};
  cfg.t_near = c.at("t_near").get<double>();
  cfg.t_far = c.at("t_far").get<double>();
  cfg.init_scale = 0.0;

  LoadedCheckpoint out;
  out.model = make_model(cfg, 0);
  out.step = j.at("step").get<int64_t>();
  int num_levels = j.at("num_levels").get<int>();
  out.model.grid.levels.resize(num_levels);
  for (int i = 0; i < num_levels; ++i) {
    auto& lvl = out.model.grid.levels[i];
    lvl.resolution = out.model.lod.level_resolution(i);
    uint32_t r = uint32_t(lvl.resolution);
    lvl.values = detail::read_section(in, {r, r, r, uint32_t(cfg.feature_dim)});
  }
  auto& d = out.model.decoder;
  uint32_t ho = uint32_t(d.head_out()), din = uint32_t(d.mlp_in()), h = uint32_t(d.hidden_dim);
  d.w_rff = detail::read_section(in, {uint32_t(d.rff_dim), uint32_t(d.feature_dim)});
  d.head_w = detail::read_section(in, {ho, uint32_t(d.rff_dim)});
  d.head_b = detail::read_section(in, {ho});
  d.w1 = detail::read_section(in, {h, din});
  d.b1 = detail::read_section(in, {h});
  d.w2 = detail::read_section(in, {h, h});
  d.b2 = detail::read_section(in, {h});
  d.w3 = detail::read_section(in, {3, h});
  d.b3 = detail::read_section(in, {3});
  out.model.neus.log_s = detail::read_section(in, {1})[0];
  return out;
}

// Training-continuation sidecar: float64 parameters plus Adam moments and
// per-group step counts, so a resumed run reproduces an uninterrupted one
// bit for bit. The f32 checkpoint stays the interchange format.
inline void save_train_state(const std::string& path, TrainState& state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_train_state: cannot open " + path);
  out.write(kStateMagic, 8);
  detail::write_pod<int64_t>(out, state.step);
  auto groups = collect_params(state.model);
  detail::write_pod<uint64_t>(out, groups.size());
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const auto& buf = state.opt[gi];
    detail::write_pod<uint64_t>(out, g.name.size());
    out.write(g.name.data(), std::streamsize(g.name.size()));
    detail::write_pod<int64_t>(out, buf.t);
    detail::write_pod<uint64_t>(out, g.size);
    out.write(reinterpret_cast<const char*>(g.data), std::streamsize(g.size * sizeof(double)));
    out.write(reinterpret_cast<const char*>(buf.m.data()), std::streamsize(g.size * sizeof(double)));
    out.write(reinterpret_cast<const char*>(buf.v.data()), std::streamsize(g.size * sizeof(double)));
  }
  if (!out) throw std::runtime_error("save_train_state: write failed for " + path);
}

// Overlays sidecar data onto a state built from the matching checkpoint.
inline void load_train_state(const std::string& path, TrainState& state) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_train_state: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kStateMagic, 8) != 0)
    throw std::runtime_error("load_train_state: bad magic in " + path);
  state.step = detail::read_pod<int64_t>(in);
  auto groups = collect_params(state.model);
  uint64_t n = detail::read_pod<uint64_t>(in);
  if (n != groups.size()) throw std::runtime_error("load_train_state: group count mismatch");
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    auto& g = groups[gi];
    auto& buf = state.opt[gi];
    uint64_t name_len = detail::read_pod<uint64_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), std::streamsize(name_len));
    if (name != g.name) throw std::runtime_error("load_train_state: group order mismatch at " + name);
    buf.t = detail::read_pod<int64_t>(in);
    uint64_t size = detail::read_pod<uint64_t>(in);
    if (size != g.size) throw std::runtime_error("load_train_state: group size mismatch at " + name);
    in.read(reinterpret_cast<char*>(g.data), std::streamsize(size * sizeof(double)));
    in.read(reinterpret_cast<char*>(buf.m.data()), std::streamsize(size * sizeof(double)));
    in.read(reinterpret_cast<char*>(buf.v.data()), std::streamsize(size * sizeof(double)));
    if (!in) throw std::runtime_error("load_train_state: truncated data in " + path);
  }
}

}  // namespace ring
