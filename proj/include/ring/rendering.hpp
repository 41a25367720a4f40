#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "ring/contraction.hpp"
#include "ring/core.hpp"
#include "ring/decoder.hpp"
#include "ring/geometry.hpp"

namespace ring {

// Inverse width of the logistic CDF used by the SDF-to-density conversion,
// kept positive by storing the log.
struct NeusParams {
  double log_s = std::log(4.0);
  double s() const { return std::exp(log_s); }
};

constexpr double kNeusInsideGuard = 1e-12;

// alpha = max((phi(sdf_near) - phi(sdf_far)) / phi(sdf_near), 0) with
// phi(x) = sigmoid(s x); 0 when the near CDF has fully vanished.
inline double neus_alpha(const NeusParams& p, double sdf_near, double sdf_far) {
  double s = p.s();
  double phi_near = sigmoid(s * sdf_near);
  if (phi_near < kNeusInsideGuard) return 0.0;
  double phi_far = sigmoid(s * sdf_far);
  return std::max((phi_near - phi_far) / phi_near, 0.0);
}

// d(alpha)/d(sdf_near), d(sdf_far), d(log_s); zero where the clamps bind.
inline void neus_alpha_backward(const NeusParams& p, double sdf_near, double sdf_far, double dalpha,
                                double& dnear, double& dfar, double& dlog_s) {
  double s = p.s();
  double phi_near = sigmoid(s * sdf_near);
  if (phi_near < kNeusInsideGuard) return;
  double phi_far = sigmoid(s * sdf_far);
  if (phi_near - phi_far <= 0.0) return;
  double dphi_near = phi_near * (1.0 - phi_near);
  double dphi_far = phi_far * (1.0 - phi_far);
  // alpha = 1 - phi_far / phi_near
  dnear += dalpha * s * dphi_near * phi_far / sqr(phi_near);
  dfar += dalpha * (-s * dphi_far / phi_near);
  double da_ds = (dphi_near * sdf_near * phi_far - dphi_far * sdf_far * phi_near) / sqr(phi_near);
  dlog_s += dalpha * da_ds * s;
}

struct CompositeResult {
  Vec3 color;
  double accumulated_opacity = 0.0;
  double depth = 0.0;
  std::vector<double> weights;
  std::vector<double> alphas;
};

// Front-to-back transmittance compositing over ordered samples. Density mode
// uses alpha_i = 1 - exp(-sigma_i dt_i); sdf mode converts consecutive sdf
// pairs, the last sample getting alpha = 0. Rays that do not saturate are
// composited over the constant background.
inline CompositeResult composite(std::span<const double> geometry, std::span<const Vec3> colors,
                                 std::span<const double> dts, std::span<const double> ts, FieldMode mode,
                                 const NeusParams* neus, const Vec3& background) {
  size_t n = geometry.size();
  if (colors.size() != n || dts.size() != n || ts.size() != n)
    throw std::invalid_argument("composite: input size mismatch");
  if (mode == FieldMode::sdf && neus == nullptr)
    throw std::invalid_argument("composite: sdf mode requires NeuS parameters");

  CompositeResult res;
  res.alphas.resize(n);
  res.weights.resize(n);
  for (size_t i = 0; i < n; ++i) {
    if (mode == FieldMode::density) {
      res.alphas[i] = 1.0 - std::exp(-geometry[i] * dts[i]);
    } else {
      res.alphas[i] = (i + 1 < n) ? neus_alpha(*neus, geometry[i], geometry[i + 1]) : 0.0;
    }
  }
  double transmittance = 1.0;
  double depth_sum = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double w = transmittance * res.alphas[i];
    res.weights[i] = w;
    res.color += w * colors[i];
    depth_sum += w * ts[i];
    res.accumulated_opacity += w;
    transmittance *= 1.0 - res.alphas[i];
  }
  res.depth = depth_sum / std::max(res.accumulated_opacity, 1e-10);
  res.color += (1.0 - res.accumulated_opacity) * background;
  return res;
}

// Reverse pass of the compositing sum: from d(color) to per-sample d(alpha)
// and d(color_i). The background term makes dw_i = <dC, c_i - bg>.
inline void composite_backward(const CompositeResult& res, std::span<const Vec3> colors,
                               const Vec3& background, const Vec3& dcolor, std::span<double> dalpha,
                               std::span<Vec3> dcolors) {
  size_t n = res.alphas.size();
  std::vector<double> dw(n);
  for (size_t i = 0; i < n; ++i) {
    dcolors[i] = res.weights[i] * dcolor;
    dw[i] = dot(dcolor, colors[i] - background);
  }
  // T_i reconstructed front-to-back, then suffix sums for the (1 - alpha_k)
  // chain: dalpha_k = dw_k T_k - sum_{i>k} dw_i w_i / (1 - alpha_k).
  std::vector<double> trans(n);
  double t = 1.0;
  for (size_t i = 0; i < n; ++i) {
    trans[i] = t;
    t *= 1.0 - res.alphas[i];
  }
  double suffix = 0.0;
  for (size_t k = n; k-- > 0;) {
    double one_m = 1.0 - res.alphas[k];
    dalpha[k] = dw[k] * trans[k] - (one_m > 0.0 ? suffix / one_m : 0.0);
    suffix += dw[k] * res.weights[k];
  }
}

// Distance-aware LOD per sample, clamped by the max cap.
inline void resolve_lods(std::vector<ConeSample>& samples, const LodConfig& cfg, const ContractionMap& map,
                         double footprint_c, double max_lod) {
  for (auto& s : samples) {
    s.footprint_c = footprint_c;
    s.lod = std::max(0.0, std::min(lod_for_sample(cfg, map, s.t, footprint_c, s.position), max_lod));
  }
}

}  // namespace ring
