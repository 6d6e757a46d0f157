#pragma once

#include "eot/tensor.hpp"

namespace eot::color {

/// sRGB electro-optical transfer (gamma expansion) for one channel in [0,1].
real srgb_to_linear(real c);
real linear_to_srgb(real c);

/// Derivative of srgb_to_linear; at the branch point the linear-segment
/// derivative is used (condition c <= 0.04045).
real srgb_to_linear_derivative(real c);

/// sRGB (D65) to CIELAB. The reference white is the conversion matrix applied
/// to linear (1,1,1) — i.e. the matrix row sums — so that sRGB white maps to
/// exactly L=100, a=b=0.
void rgb_to_lab(const real rgb[3], real lab[3]);

/// Forward plus 3x3 Jacobian d(lab_i)/d(rgb_j), row-major jac[i*3+j].
void rgb_to_lab_jacobian(const real rgb[3], real lab[3], real jac[9]);

/// Inverse conversion (exact inverse of rgb_to_lab for in-gamut colors).
void lab_to_rgb(const real lab[3], real rgb[3]);

}  // namespace eot::color
