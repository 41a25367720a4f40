#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include "ring/core.hpp"

namespace ring {

inline int sh_basis_size(int degree) { return (degree + 1) * (degree + 1); }

// Real spherical harmonics up to degree 4, orthonormal over the unit sphere.
// Non-unit directions are normalized internally.
inline void sh_encode_into(const Vec3& dir, int degree, std::span<double> out) {
  if (degree < 0 || degree > 4) throw std::invalid_argument("sh_encode: degree must be in [0, 4]");
  Vec3 d = normalized(dir);
  double x = d.x, y = d.y, z = d.z;

  out[0] = 0.28209479177387814;
  if (degree < 1) return;
  out[1] = 0.4886025119029199 * y;
  out[2] = 0.4886025119029199 * z;
  out[3] = 0.4886025119029199 * x;
  if (degree < 2) return;
  double xx = x * x, yy = y * y, zz = z * z;
  double xy = x * y, yz = y * z, xz = x * z;
  out[4] = 1.0925484305920792 * xy;
  out[5] = 1.0925484305920792 * yz;
  out[6] = 0.31539156525252005 * (3.0 * zz - 1.0);
  out[7] = 1.0925484305920792 * xz;
  out[8] = 0.5462742152960396 * (xx - yy);
  if (degree < 3) return;
  out[9] = 0.5900435899266435 * y * (3.0 * xx - yy);
  out[10] = 2.890611442640554 * xy * z;
  out[11] = 0.4570457994644658 * y * (5.0 * zz - 1.0);
  out[12] = 0.3731763325901154 * z * (5.0 * zz - 3.0);
  out[13] = 0.4570457994644658 * x * (5.0 * zz - 1.0);
  out[14] = 1.445305721320277 * z * (xx - yy);
  out[15] = 0.5900435899266435 * x * (xx - 3.0 * yy);
  if (degree < 4) return;
  out[16] = 2.5033429417967046 * xy * (xx - yy);
  out[17] = 1.7701307697799304 * yz * (3.0 * xx - yy);
  out[18] = 0.9461746957575601 * xy * (7.0 * zz - 1.0);
  out[19] = 0.6690465435572892 * yz * (7.0 * zz - 3.0);
  out[20] = 0.10578554691520431 * (35.0 * zz * zz - 30.0 * zz + 3.0);
  out[21] = 0.6690465435572892 * xz * (7.0 * zz - 3.0);
  out[22] = 0.47308734787878004 * (xx - yy) * (7.0 * zz - 1.0);
  out[23] = 1.7701307697799304 * xz * (xx - 3.0 * yy);
  out[24] = 0.6258357354491761 * (xx * xx - 6.0 * xx * yy + yy * yy);
}

inline std::vector<double> sh_encode(const Vec3& dir, int degree) {
  std::vector<double> out(sh_basis_size(degree));
  sh_encode_into(dir, degree, out);
  return out;
}

}  // namespace ring
