#include "eot/color.hpp"

#include <cmath>

namespace eot::color {

namespace {

// Linear-RGB -> XYZ for sRGB primaries with D65 white, row-major.
constexpr real kRgbToXyz[9] = {
    0.4124564, 0.3575761, 0.1804375,  //
    0.2126729, 0.7151522, 0.0721750,  //
    0.0193339, 0.1191920, 0.9503041,
};

// Reference white = matrix row sums, so linear (1,1,1) maps to ratios of
// exactly 1 and sRGB white to exactly (L,a,b) = (100,0,0).
constexpr real kWhite[3] = {
    kRgbToXyz[0] + kRgbToXyz[1] + kRgbToXyz[2],
    kRgbToXyz[3] + kRgbToXyz[4] + kRgbToXyz[5],
    kRgbToXyz[6] + kRgbToXyz[7] + kRgbToXyz[8],
};

constexpr real kDelta = 6.0 / 29.0;
constexpr real kDelta3 = kDelta * kDelta * kDelta;

real lab_f(real t) {
  if (t > kDelta3) return std::cbrt(t);
  return t / (3.0 * kDelta * kDelta) + 4.0 / 29.0;
}

real lab_f_derivative(real t) {
  if (t > kDelta3) {
    const real r = std::cbrt(t);
    return 1.0 / (3.0 * r * r);
  }
  return 1.0 / (3.0 * kDelta * kDelta);
}

real lab_f_inverse(real t) {
  if (t > kDelta) return t * t * t;
  return 3.0 * kDelta * kDelta * (t - 4.0 / 29.0);
}

struct Mat3 {
  real m[9];
};

// Inverse of kRgbToXyz, computed once via the adjugate.
const Mat3& xyz_to_rgb_matrix() {
  static const Mat3 inv = [] {
    const real* a = kRgbToXyz;
    const real det = a[0] * (a[4] * a[8] - a[5] * a[7]) -
                     a[1] * (a[3] * a[8] - a[5] * a[6]) +
                     a[2] * (a[3] * a[7] - a[4] * a[6]);
    Mat3 r;
    r.m[0] = (a[4] * a[8] - a[5] * a[7]) / det;
    r.m[1] = (a[2] * a[7] - a[1] * a[8]) / det;
    r.m[2] = (a[1] * a[5] - a[2] * a[4]) / det;
    r.m[3] = (a[5] * a[6] - a[3] * a[8]) / det;
    r.m[4] = (a[0] * a[8] - a[2] * a[6]) / det;
    r.m[5] = (a[2] * a[3] - a[0] * a[5]) / det;
    r.m[6] = (a[3] * a[7] - a[4] * a[6]) / det;
    r.m[7] = (a[1] * a[6] - a[0] * a[7]) / det;
    r.m[8] = (a[0] * a[4] - a[1] * a[3]) / det;
    return r;
  }();
  return inv;
}

}  // namespace

real srgb_to_linear(real c) {
  if (c <= 0.04045) return c / 12.92;
  return std::pow((c + 0.055) / 1.055, 2.4);
}

real linear_to_srgb(real c) {
  if (c <= 0.0031308) return c * 12.92;
  return 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

real srgb_to_linear_derivative(real c) {
  if (c <= 0.04045) return 1.0 / 12.92;
  return (2.4 / 1.055) * std::pow((c + 0.055) / 1.055, 1.4);
}

void rgb_to_lab(const real rgb[3], real lab[3]) {
  const real lin[3] = {srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2])};
  real fxyz[3];
  for (int i = 0; i < 3; ++i) {
    const real v =
        (kRgbToXyz[i * 3] * lin[0] + kRgbToXyz[i * 3 + 1] * lin[1] + kRgbToXyz[i * 3 + 2] * lin[2]) /
        kWhite[i];
    fxyz[i] = lab_f(v);
  }
  lab[0] = 116.0 * fxyz[1] - 16.0;
  lab[1] = 500.0 * (fxyz[0] - fxyz[1]);
  lab[2] = 200.0 * (fxyz[1] - fxyz[2]);
}

void rgb_to_lab_jacobian(const real rgb[3], real lab[3], real jac[9]) {
  const real lin[3] = {srgb_to_linear(rgb[0]), srgb_to_linear(rgb[1]), srgb_to_linear(rgb[2])};
  const real dlin[3] = {srgb_to_linear_derivative(rgb[0]), srgb_to_linear_derivative(rgb[1]),
                        srgb_to_linear_derivative(rgb[2])};
  real fxyz[3];
  real dfxyz_drgb[9];  // d f(channel_i) / d rgb_j
  for (int i = 0; i < 3; ++i) {
    const real v =
        (kRgbToXyz[i * 3] * lin[0] + kRgbToXyz[i * 3 + 1] * lin[1] + kRgbToXyz[i * 3 + 2] * lin[2]) /
        kWhite[i];
    fxyz[i] = lab_f(v);
    const real df = lab_f_derivative(v);
    for (int j = 0; j < 3; ++j) {
      dfxyz_drgb[i * 3 + j] = df * kRgbToXyz[i * 3 + j] * dlin[j] / kWhite[i];
    }
  }
  lab[0] = 116.0 * fxyz[1] - 16.0;
  lab[1] = 500.0 * (fxyz[0] - fxyz[1]);
  lab[2] = 200.0 * (fxyz[1] - fxyz[2]);
  for (int j = 0; j < 3; ++j) {
    jac[0 * 3 + j] = 116.0 * dfxyz_drgb[1 * 3 + j];
    jac[1 * 3 + j] = 500.0 * (dfxyz_drgb[0 * 3 + j] - dfxyz_drgb[1 * 3 + j]);
    jac[2 * 3 + j] = 200.0 * (dfxyz_drgb[1 * 3 + j] - dfxyz_drgb[2 * 3 + j]);
  }
}

void lab_to_rgb(const real lab[3], real rgb[3]) {
  const real fy = (lab[0] + 16.0) / 116.0;
  const real fx = fy + lab[1] / 500.0;
  const real fz = fy - lab[2] / 200.0;
  const real xyz[3] = {kWhite[0] * lab_f_inverse(fx), kWhite[1] * lab_f_inverse(fy),
                       kWhite[2] * lab_f_inverse(fz)};
  const Mat3& inv = xyz_to_rgb_matrix();
  for (int i = 0; i < 3; ++i) {
    const real lin = inv.m[i * 3] * xyz[0] + inv.m[i * 3 + 1] * xyz[1] + inv.m[i * 3 + 2] * xyz[2];
    rgb[i] = linear_to_srgb(lin);
  }
}

}  // namespace eot::color
