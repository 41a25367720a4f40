#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "ring/core.hpp"
#include "ring/sh.hpp"

namespace ring {

enum class FieldMode { density, sdf };

// Latent-space decoder: normalization -> learnable sinusoidal filter ->
// linear head to geometry + color feature -> SH-conditioned color MLP.
// It consumes only (feature, view direction), never position or scale.
struct DecoderParams {
  int feature_dim = 4;
  int rff_dim = 32;
  int color_feature_dim = 15;
  int hidden_dim = 64;
  int sh_degree = 3;
  FieldMode mode = FieldMode::density;

  std::vector<double> w_rff;          // [rff_dim][feature_dim], no bias
  std::vector<double> head_w, head_b; // [1+C][rff_dim], [1+C]
  std::vector<double> w1, b1;         // [H][C+S], [H]
  std::vector<double> w2, b2;         // [H][H], [H]
  std::vector<double> w3, b3;         // [3][H], [3]

  int head_out() const { return 1 + color_feature_dim; }
  int mlp_in() const { return color_feature_dim + sh_basis_size(sh_degree); }
};

struct FieldSample {
  double geometry = 0.0;  // density (>= 0) or signed distance
  Vec3 color;             // (0,1)^3
};

constexpr double kNormEps = 1e-6;

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// (v - mean) / sqrt(var + eps); non-learnable. Returns 1/sqrt(var + eps).
inline double normalize_feature_into(std::span<const double> v, std::span<double> out) {
  int n = int(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += sqr(x - mean);
  var /= n;
  double inv_sigma = 1.0 / std::sqrt(var + kNormEps);
  for (int i = 0; i < n; ++i) out[i] = (v[i] - mean) * inv_sigma;
  return inv_sigma;
}

inline std::vector<double> normalize_feature(std::span<const double> v) {
  std::vector<double> out(v.size());
  normalize_feature_into(v, out);
  return out;
}

// d(loss)/d(v) given d(loss)/d(out); u is the normalized output.
inline void normalize_feature_backward(std::span<const double> u, double inv_sigma,
                                       std::span<const double> dout, std::span<double> dv) {
  int n = int(u.size());
  double mean_d = 0.0, mean_du = 0.0;
  for (int i = 0; i < n; ++i) {
    mean_d += dout[i];
    mean_du += dout[i] * u[i];
  }
  mean_d /= n;
  mean_du /= n;
  for (int i = 0; i < n; ++i) dv[i] = inv_sigma * (dout[i] - mean_d - u[i] * mean_du);
}

inline std::vector<double> rff(const DecoderParams& p, std::span<const double> v) {
  std::vector<double> out(p.rff_dim);
  for (int r = 0; r < p.rff_dim; ++r) {
    double s = 0.0;
    const double* row = p.w_rff.data() + size_t(r) * p.feature_dim;
    for (int f = 0; f < p.feature_dim; ++f) s += row[f] * v[f];
    out[r] = std::sin(s);
  }
  return out;
}

// Everything the backward pass needs about one decode. The SH vector is held
// by the caller (it is shared across all samples of a ray).
struct DecodeTape {
  std::vector<double> u;    // normalized feature (F)
  double inv_sigma = 0.0;
  std::vector<double> sin_wu, cos_wu;  // filter activation and its derivative (R)
  std::vector<double> g;    // head output (1 + C)
  std::vector<double> z1, z2;  // post-relu activations (H)
  Vec3 color;
  bool has_color = false;
};

// Reusable buffers for the forward/backward hot path, so per-sample work is
// allocation-free once warmed up.
struct DecodeScratch {
  std::vector<double> wu, z0;          // forward
  std::vector<double> dg, dz1, dz2, dr, du;  // backward
};

namespace detail {

inline void matvec(const std::vector<double>& w, std::span<const double> x, std::span<double> y,
                   int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    double s = 0.0;
    const double* row = w.data() + size_t(r) * cols;
    for (int c = 0; c < cols; ++c) s += row[c] * x[c];
    y[r] = s;
  }
}

}  // namespace detail

// Geometry head only (used for SDF probes where color is not needed).
// Returns the raw head output g0; density mode applies softplus on top.
inline double decode_geometry_raw(const DecoderParams& p, std::span<const double> feature,
                                  DecodeTape& tape, DecodeScratch& scratch) {
  tape.u.resize(p.feature_dim);
  tape.inv_sigma = normalize_feature_into(feature, tape.u);
  scratch.wu.resize(p.rff_dim);
  detail::matvec(p.w_rff, tape.u, scratch.wu, p.rff_dim, p.feature_dim);
  tape.sin_wu.resize(p.rff_dim);
  tape.cos_wu.resize(p.rff_dim);
  for (int r = 0; r < p.rff_dim; ++r) {
    tape.sin_wu[r] = std::sin(scratch.wu[r]);
    tape.cos_wu[r] = std::cos(scratch.wu[r]);
  }
  tape.g.assign(p.head_out(), 0.0);
  double g0 = p.head_b[0];
  const double* row = p.head_w.data();
  for (int r = 0; r < p.rff_dim; ++r) g0 += row[r] * tape.sin_wu[r];
  tape.g[0] = g0;
  tape.has_color = false;
  return g0;
}

inline FieldSample decode_with_sh(const DecoderParams& p, std::span<const double> feature,
                                  std::span<const double> sh, DecodeTape& tape, DecodeScratch& scratch) {
  tape.u.resize(p.feature_dim);
  tape.inv_sigma = normalize_feature_into(feature, tape.u);
  scratch.wu.resize(p.rff_dim);
  detail::matvec(p.w_rff, tape.u, scratch.wu, p.rff_dim, p.feature_dim);

  tape.sin_wu.resize(p.rff_dim);
  tape.cos_wu.resize(p.rff_dim);
  for (int i = 0; i < p.rff_dim; ++i) {
    tape.sin_wu[i] = std::sin(scratch.wu[i]);
    tape.cos_wu[i] = std::cos(scratch.wu[i]);
  }

  int ho = p.head_out();
  tape.g.resize(ho);
  detail::matvec(p.head_w, tape.sin_wu, tape.g, ho, p.rff_dim);
  for (int i = 0; i < ho; ++i) tape.g[i] += p.head_b[i];

  int in = p.mlp_in();
  scratch.z0.resize(in);
  for (int i = 0; i < p.color_feature_dim; ++i) scratch.z0[i] = tape.g[1 + i];
  for (size_t i = 0; i < sh.size(); ++i) scratch.z0[p.color_feature_dim + i] = sh[i];

  int h = p.hidden_dim;
  tape.z1.resize(h);
  detail::matvec(p.w1, scratch.z0, tape.z1, h, in);
  for (int i = 0; i < h; ++i) tape.z1[i] = std::max(0.0, tape.z1[i] + p.b1[i]);
  tape.z2.resize(h);
  detail::matvec(p.w2, tape.z1, tape.z2, h, h);
  for (int i = 0; i < h; ++i) tape.z2[i] = std::max(0.0, tape.z2[i] + p.b2[i]);

  double logits[3];
  for (int o = 0; o < 3; ++o) {
    double s = p.b3[o];
    const double* row = p.w3.data() + size_t(o) * h;
    for (int i = 0; i < h; ++i) s += row[i] * tape.z2[i];
    logits[o] = s;
  }
  tape.color = {sigmoid(logits[0]), sigmoid(logits[1]), sigmoid(logits[2])};
  tape.has_color = true;

  FieldSample out;
  out.geometry = p.mode == FieldMode::density ? softplus(tape.g[0]) : tape.g[0];
  out.color = tape.color;
  return out;
}

inline FieldSample decode(const DecoderParams& p, std::span<const double> feature, const Vec3& view_dir) {
  std::vector<double> sh = sh_encode(view_dir, p.sh_degree);
  DecodeTape tape;
  DecodeScratch scratch;
  return decode_with_sh(p, feature, sh, tape, scratch);
}

// Gradient buffers matching DecoderParams (and the NeuS width parameter,
// which travels with the decoder group set for convenience).
struct DecoderGrads {
  std::vector<double> w_rff, head_w, head_b, w1, b1, w2, b2, w3, b3;

  void init(const DecoderParams& p) {
    w_rff.assign(p.w_rff.size(), 0.0);
    head_w.assign(p.head_w.size(), 0.0);
    head_b.assign(p.head_b.size(), 0.0);
    w1.assign(p.w1.size(), 0.0);
    b1.assign(p.b1.size(), 0.0);
    w2.assign(p.w2.size(), 0.0);
    b2.assign(p.b2.size(), 0.0);
    w3.assign(p.w3.size(), 0.0);
    b3.assign(p.b3.size(), 0.0);
  }
  void add(const DecoderGrads& o) {
    auto acc = [](std::vector<double>& a, const std::vector<double>& b) {
      for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    acc(w_rff, o.w_rff); acc(head_w, o.head_w); acc(head_b, o.head_b);
    acc(w1, o.w1); acc(b1, o.b1); acc(w2, o.w2); acc(b2, o.b2); acc(w3, o.w3); acc(b3, o.b3);
  }
};

// Reverse pass through the decoder. dgeometry is w.r.t. the activated
// geometry output (softplus applied in density mode), dcolor w.r.t. the
// sigmoid color. Parameter gradients accumulate into `grads`; the gradient
// w.r.t. the raw input feature lands in dfeature.
inline void decode_backward(const DecoderParams& p, const DecodeTape& tape, std::span<const double> sh,
                            double dgeometry, const Vec3& dcolor, DecoderGrads& grads,
                            std::span<double> dfeature, DecodeScratch& scratch) {
  int ho = p.head_out();
  auto& dg = scratch.dg;
  dg.assign(ho, 0.0);

  if (tape.has_color) {
    int h = p.hidden_dim;
    int in = p.mlp_in();
    double dlogits[3];
    dlogits[0] = dcolor.x * tape.color.x * (1.0 - tape.color.x);
    dlogits[1] = dcolor.y * tape.color.y * (1.0 - tape.color.y);
    dlogits[2] = dcolor.z * tape.color.z * (1.0 - tape.color.z);

    auto& dz2 = scratch.dz2;
    dz2.assign(h, 0.0);
    for (int o = 0; o < 3; ++o) {
      double* gw = grads.w3.data() + size_t(o) * h;
      const double* row = p.w3.data() + size_t(o) * h;
      for (int i = 0; i < h; ++i) {
        gw[i] += dlogits[o] * tape.z2[i];
        dz2[i] += row[i] * dlogits[o];
      }
      grads.b3[o] += dlogits[o];
    }
    for (int i = 0; i < h; ++i)
      if (tape.z2[i] <= 0.0) dz2[i] = 0.0;

    auto& dz1 = scratch.dz1;
    dz1.assign(h, 0.0);
    for (int o = 0; o < h; ++o) {
      if (dz2[o] == 0.0) continue;
      double* gw = grads.w2.data() + size_t(o) * h;
      const double* row = p.w2.data() + size_t(o) * h;
      for (int i = 0; i < h; ++i) {
        gw[i] += dz2[o] * tape.z1[i];
        dz1[i] += row[i] * dz2[o];
      }
      grads.b2[o] += dz2[o];
    }
    for (int i = 0; i < h; ++i)
      if (tape.z1[i] <= 0.0) dz1[i] = 0.0;

    auto& z0 = scratch.z0;
    z0.resize(in);
    for (int i = 0; i < p.color_feature_dim; ++i) z0[i] = tape.g[1 + i];
    for (size_t i = 0; i < sh.size(); ++i) z0[p.color_feature_dim + i] = sh[i];
    for (int o = 0; o < h; ++o) {
      if (dz1[o] == 0.0) continue;
      double* gw = grads.w1.data() + size_t(o) * in;
      const double* row = p.w1.data() + size_t(o) * in;
      for (int i = 0; i < in; ++i) gw[i] += dz1[o] * z0[i];
      for (int i = 0; i < p.color_feature_dim; ++i) dg[1 + i] += row[i] * dz1[o];
      grads.b1[o] += dz1[o];
    }
  }

  dg[0] = p.mode == FieldMode::density ? dgeometry * sigmoid(tape.g[0]) : dgeometry;

  auto& dr = scratch.dr;
  dr.assign(p.rff_dim, 0.0);
  int rows = tape.has_color ? ho : 1;
  for (int o = 0; o < rows; ++o) {
    if (dg[o] == 0.0) continue;
    double* gw = grads.head_w.data() + size_t(o) * p.rff_dim;
    const double* row = p.head_w.data() + size_t(o) * p.rff_dim;
    for (int r = 0; r < p.rff_dim; ++r) {
      gw[r] += dg[o] * tape.sin_wu[r];
      dr[r] += row[r] * dg[o];
    }
    grads.head_b[o] += dg[o];
  }

  auto& du = scratch.du;
  du.assign(p.feature_dim, 0.0);
  for (int r = 0; r < p.rff_dim; ++r) {
    double dwu = dr[r] * tape.cos_wu[r];
    if (dwu == 0.0) continue;
    double* gw = grads.w_rff.data() + size_t(r) * p.feature_dim;
    const double* row = p.w_rff.data() + size_t(r) * p.feature_dim;
    for (int f = 0; f < p.feature_dim; ++f) {
      gw[f] += dwu * tape.u[f];
      du[f] += row[f] * dwu;
    }
  }

  normalize_feature_backward(tape.u, tape.inv_sigma, du, dfeature);
}

inline DecoderParams init_decoder(int feature_dim, int rff_dim, int color_feature_dim, int hidden_dim,
                                  int sh_degree, FieldMode mode, uint64_t rng_seed) {
  if (rff_dim < feature_dim) throw std::invalid_argument("init_decoder: rff_dim must be >= feature_dim");
  DecoderParams p;
  p.feature_dim = feature_dim;
  p.rff_dim = rff_dim;
  p.color_feature_dim = color_feature_dim;
  p.hidden_dim = hidden_dim;
  p.sh_degree = sh_degree;
  p.mode = mode;

  Rng rng(rng_seed);
  p.w_rff.resize(size_t(rff_dim) * feature_dim);
  for (auto& v : p.w_rff) v = rng.normal();

  auto xavier = [&](std::vector<double>& w, int fan_out, int fan_in) {
    w.resize(size_t(fan_out) * fan_in);
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : w) v = rng.uniform(-a, a);
  };
  xavier(p.head_w, p.head_out(), rff_dim);
  p.head_b.assign(p.head_out(), 0.0);
  xavier(p.w1, hidden_dim, p.mlp_in());
  p.b1.assign(hidden_dim, 0.0);
  xavier(p.w2, hidden_dim, hidden_dim);
  p.b2.assign(hidden_dim, 0.0);
  xavier(p.w3, 3, hidden_dim);
  p.b3.assign(3, 0.0);
  return p;
}

}  // namespace ring
