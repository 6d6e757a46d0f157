#pragma once

#include <string>

#include "eot/tensor.hpp"

namespace eot::imageio {

/// Writes an [H,W,C] image (C = 1 or 3) as a lossless raw float file: magic
/// "EOTIMG01", a length-prefixed key=value header declaring the shape,
/// little-endian f64 payload in row-major order, and a CRC32 of the payload.
/// The byte stream is a pure function of the tensor, so identical images
/// produce identical files.
void write_image_raw(const Tensor& image, const std::string& path);

/// Reads a raw float image back; exact inverse of write_image_raw.
Tensor read_image_raw(const std::string& path);

/// Writes an [H,W,C] image (C = 1 or 3) as an 8-bit PNG (grayscale or
/// truecolor). Values are clamped to [0,1] and quantized by round(v * 255).
/// The encoder is deterministic: identical images produce identical files.
void write_png(const Tensor& image, const std::string& path);

}  // namespace eot::imageio
