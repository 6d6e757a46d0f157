#include "eot/image_io.hpp"

#include <zlib.h>

#include <charconv>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "binio.hpp"
#include "eot/errors.hpp"

namespace eot::imageio {

namespace {

constexpr char kImageMagic[8] = {'E', 'O', 'T', 'I', 'M', 'G', '0', '1'};

[[noreturn]] void fail(const std::string& message) { throw Error("image_io: " + message); }

void check_image_shape(const Tensor& image, const char* caller) {
  if (image.rank() != 3 || (image.shape()[2] != 1 && image.shape()[2] != 3) ||
      image.shape()[0] == 0 || image.shape()[1] == 0) {
    fail(std::string(caller) + ": image must be [H,W,C] with C = 1 or 3, got " +
         shape_to_string(image.shape()));
  }
}

std::uint32_t crc_of(const unsigned char* data, std::size_t len) {
  return static_cast<std::uint32_t>(crc32_z(0, reinterpret_cast<const Bytef*>(data), len));
}

std::size_t parse_dim(const std::string& part, const std::string& text) {
  std::size_t value = 0;
  const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), value);
  if (ec != std::errc() || ptr != part.data() + part.size()) {
    fail("bad shape field '" + text + "' in image header");
  }
  return value;
}

}  // namespace

void write_image_raw(const Tensor& image, const std::string& path) {
  check_image_shape(image, "write_image_raw");
  const std::string header = "shape=" + std::to_string(image.shape()[0]) + "," +
                             std::to_string(image.shape()[1]) + "," +
                             std::to_string(image.shape()[2]) + "\n";
  std::string payload;
  payload.reserve(image.size() * 8);
  for (std::size_t i = 0; i < image.size(); ++i) binio::put_f64_le(payload, image[i]);
  const std::uint32_t crc =
      crc_of(reinterpret_cast<const unsigned char*>(payload.data()), payload.size());

  std::string file;
  file.append(kImageMagic, sizeof kImageMagic);
  binio::put_u32_le(file, static_cast<std::uint32_t>(header.size()));
  file += header;
  file += payload;
  binio::put_u32_le(file, crc);
  binio::write_file_bytes(path, file, "image");
}

Tensor read_image_raw(const std::string& path) {
  const std::vector<unsigned char> buf = binio::read_file_bytes(path, "image");
  if (buf.size() < sizeof kImageMagic + 4) fail("image file '" + path + "' is truncated");
  if (std::memcmp(buf.data(), kImageMagic, 6) != 0) {
    fail("'" + path + "' is not a raw image file (bad magic)");
  }
  if (std::memcmp(buf.data() + 6, kImageMagic + 6, 2) != 0) {
    fail("unsupported raw image version '" + std::string(buf.begin() + 6, buf.begin() + 8) +
         "' in '" + path + "' (expected 01)");
  }
  const std::size_t header_len = binio::get_u32_le(buf.data() + 8);
  if (12 + header_len > buf.size()) fail("image file '" + path + "' is truncated");
  const std::string header(buf.begin() + 12, buf.begin() + 12 + static_cast<long>(header_len));

  std::string shape_text;
  std::size_t pos = 0;
  while (pos < header.size()) {
    std::size_t end = header.find('\n', pos);
    if (end == std::string::npos) end = header.size();
    const std::string line = header.substr(pos, end - pos);
    pos = end + 1;
    if (line.rfind("shape=", 0) == 0) shape_text = line.substr(6);
  }
  if (shape_text.empty()) fail("image header is missing 'shape'");
  Shape shape;
  std::size_t spos = 0;
  while (spos <= shape_text.size()) {
    std::size_t end = shape_text.find(',', spos);
    if (end == std::string::npos) end = shape_text.size();
    shape.push_back(parse_dim(shape_text.substr(spos, end - spos), shape_text));
    if (end == shape_text.size()) break;
    spos = end + 1;
  }
  if (shape.size() != 3 || (shape[2] != 1 && shape[2] != 3) || shape[0] == 0 || shape[1] == 0) {
    fail("image header declares unsupported shape " + shape_to_string(shape));
  }

  const std::size_t payload_off = 12 + header_len;
  const std::size_t payload_len = numel(shape) * 8;
  if (payload_off + payload_len + 4 != buf.size()) {
    fail("image file '" + path + "' is truncated or has trailing bytes");
  }
  if (crc_of(buf.data() + payload_off, payload_len) !=
      binio::get_u32_le(buf.data() + payload_off + payload_len)) {
    fail("image file '" + path + "' failed its checksum (corrupted payload)");
  }
  Tensor image(shape);
  std::size_t off = payload_off;
  for (std::size_t i = 0; i < image.size(); ++i, off += 8) {
    image[i] = binio::get_f64_le(buf.data() + off);
  }
  return image;
}

namespace {

void put_u32_be(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>((v >> 24) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>(v & 0xff));
}

void append_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32_be(out, crc_of(reinterpret_cast<const unsigned char*>(body.data()), body.size()));
}

}  // namespace

void write_png(const Tensor& image, const std::string& path) {
  check_image_shape(image, "write_png");
  const std::size_t h = image.shape()[0];
  const std::size_t w = image.shape()[1];
  const std::size_t c = image.shape()[2];

  // Scanlines with filter byte 0, pixels quantized by round(clamp(v) * 255).
  std::string raster;
  raster.reserve(h * (1 + w * c));
  for (std::size_t y = 0; y < h; ++y) {
    raster.push_back('\0');
    for (std::size_t x = 0; x < w * c; ++x) {
      const real v = std::clamp(image[y * w * c + x], 0.0, 1.0);
      raster.push_back(static_cast<char>(std::lround(v * 255.0)));
    }
  }
  uLongf bound = compressBound(static_cast<uLong>(raster.size()));
  std::string compressed(bound, '\0');
  if (compress2(reinterpret_cast<Bytef*>(compressed.data()), &bound,
                reinterpret_cast<const Bytef*>(raster.data()),
                static_cast<uLong>(raster.size()), Z_BEST_COMPRESSION) != Z_OK) {
    fail("deflate failed for '" + path + "'");
  }
  compressed.resize(bound);

  std::string ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(w));
  put_u32_be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);                        // bit depth
  ihdr.push_back(c == 3 ? 2 : 0);           // color type: truecolor / grayscale
  ihdr.push_back(0);                        // compression
  ihdr.push_back(0);                        // filter
  ihdr.push_back(0);                        // interlace

  std::string file("\x89PNG\r\n\x1a\n", 8);
  append_chunk(file, "IHDR", ihdr);
  append_chunk(file, "IDAT", compressed);
  append_chunk(file, "IEND", "");
  binio::write_file_bytes(path, file, "png");
}

}  // namespace eot::imageio
