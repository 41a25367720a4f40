#pragma once

#include <cmath>
#include <stdexcept>

#include "ring/core.hpp"

namespace ring {

enum class ContractionMode { identity, linf_contract };

// Maps world space into the unit cube used for grid addressing.
//
// linf_contract: p is pre-scaled by domain_half_extent, then contracted with
// the L-inf variant of contract(p) = p for ||p|| <= 1, (2 - 1/||p||) p/||p||
// otherwise; the resulting (-2,2)^3 cube maps affinely to [0,1]^3.
// identity: p / domain_half_extent, with [-1,1]^3 mapped to [0,1]^3.
struct ContractionMap {
  ContractionMode mode = ContractionMode::linf_contract;
  double domain_half_extent = 1.0;

  void validate() const {
    if (!(domain_half_extent > 0.0)) throw std::invalid_argument("contraction: domain_half_extent must be > 0");
  }

  // Length factor of the affine map from contracted to addressing coords.
  double affine_scale() const { return mode == ContractionMode::linf_contract ? 0.25 : 0.5; }
};

namespace detail {

inline Vec3 linf_contract_raw(const Vec3& q) {
  double m = norm_inf(q);
  if (m <= 1.0) return q;
  return q * ((2.0 - 1.0 / m) / m);
}

}  // namespace detail

// Grid-addressing coordinates in [0,1]^3.
inline Vec3 contract(const ContractionMap& map, const Vec3& p) {
  if (!is_finite(p)) throw std::invalid_argument("contract: non-finite input");
  Vec3 q = p / map.domain_half_extent;
  if (map.mode == ContractionMode::identity) {
    return {(q.x + 1.0) * 0.5, (q.y + 1.0) * 0.5, (q.z + 1.0) * 0.5};
  }
  Vec3 c = detail::linf_contract_raw(q);
  return {(c.x + 2.0) * 0.25, (c.y + 2.0) * 0.25, (c.z + 2.0) * 0.25};
}

// Determinant of the Jacobian of the world -> contracted (pre-affine) map.
// For the L-inf contraction with dominant axis k the Jacobian is block
// triangular: the k-th output depends only on p_k, giving
//   det = (1/m^2) * ((2m-1)/m^2)^2 = (2m-1)^2 / m^6,  m = ||p||_inf > 1,
// and 1 inside the unit ball. The pre-scale contributes (1/h)^3; identity
// mode is the pre-scale alone. Evaluation exactly on m = 1 or on a tie
// between dominant axes takes the m > 1 branch and sets *boundary_warn.
inline double jacobian_det(const ContractionMap& map, const Vec3& p, bool* boundary_warn = nullptr) {
  if (!is_finite(p)) throw std::invalid_argument("jacobian_det: non-finite input");
  double h3 = 1.0 / (map.domain_half_extent * map.domain_half_extent * map.domain_half_extent);
  if (map.mode == ContractionMode::identity) return h3;
  Vec3 q = p / map.domain_half_extent;
  double ax = std::fabs(q.x), ay = std::fabs(q.y), az = std::fabs(q.z);
  double m = std::max({ax, ay, az});
  if (m < 1.0) return h3;
  if (boundary_warn) {
    int at_max = (ax == m) + (ay == m) + (az == m);
    if (m == 1.0 || at_max > 1) *boundary_warn = true;
  }
  return h3 * sqr(2.0 * m - 1.0) / (m * m * m * m * m * m);
}

struct LodConfig {
  int base_resolution = 16;    // b: cells per axis of grid 0
  double growth_factor = 2.0;  // f
  int num_levels = 3;          // N_max
  bool supplement_variant = false;  // det(J) without the cube root

  void validate() const {
    if (base_resolution < 2) throw std::invalid_argument("lod config: base_resolution must be >= 2");
    if (!(growth_factor > 1.0)) throw std::invalid_argument("lod config: growth_factor must be > 1");
    if (num_levels < 1) throw std::invalid_argument("lod config: num_levels must be >= 1");
  }

  int level_resolution(int level) const {
    return int(std::lround(base_resolution * std::pow(growth_factor, level)));
  }
};

// Matches the pixel-cube volume (d c)^3 det(J) against the cell volume of a
// virtual grid of resolution f^L * base:
//   L = -log(d * c * base * det(J)^(1/3)) / log(f)
// `base` is whatever base resolution the caller works in; no clamping.
inline double cone_lod(double d, double c, double base, double growth, double det_j,
                       bool supplement_variant = false) {
  double det_term = supplement_variant ? det_j : std::cbrt(det_j);
  return -std::log(d * c * base * det_term) / std::log(growth);
}

// Effective base resolution: the affine rescale of the contracted cube onto
// [0,1]^3 shrinks cells relative to world lengths, which folds into b.
inline double effective_base(const LodConfig& cfg, const ContractionMap& map) {
  return cfg.base_resolution * map.affine_scale();
}

// Distance-aware LOD of one sample, with the contracted-cube rescale folded
// into the base resolution; clamped to the representable range [0, N_max - 1].
inline double lod_for_sample(const LodConfig& cfg, const ContractionMap& map, double d, double c,
                             const Vec3& p) {
  if (!(d > 0.0) || !(c > 0.0)) throw std::invalid_argument("lod_for_sample: d and c must be > 0");
  double l = cone_lod(d, c, effective_base(cfg, map), cfg.growth_factor, jacobian_det(map, p),
                      cfg.supplement_variant);
  return std::clamp(l, 0.0, double(cfg.num_levels - 1));
}

}  // namespace ring
