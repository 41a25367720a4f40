#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ring/core.hpp"

namespace ring {

// Linear RGB raster, values nominally in [0,1], interleaved row-major.
struct Image {
  int width = 0, height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(size_t(w) * h * 3, 0.0) {}

  double* pixel(int row, int col) { return data.data() + (size_t(row) * width + col) * 3; }
  const double* pixel(int row, int col) const { return data.data() + (size_t(row) * width + col) * 3; }

  void set(int row, int col, const Vec3& c) {
    double* p = pixel(row, col);
    p[0] = c.x; p[1] = c.y; p[2] = c.z;
  }
  Vec3 get(int row, int col) const {
    const double* p = pixel(row, col);
    return {p[0], p[1], p[2]};
  }
};

inline uint8_t quantize8(double v) {
  return uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

inline std::vector<uint8_t> encode_ppm(const Image& img) {
  std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + img.data.size());
  for (double v : img.data) bytes.push_back(quantize8(v));
  return bytes;
}

inline void write_ppm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
  auto bytes = encode_ppm(img);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw std::runtime_error("write_ppm: write failed for " + path);
}

namespace detail {

inline int parse_pnm_int(std::istream& in, const std::string& path) {
  // skips whitespace and '#' comment lines
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
    if (!in) throw std::runtime_error("malformed PNM header in " + path);
  }
  int v;
  if (!(in >> v)) {
    std::ostringstream msg;
    msg << "malformed PNM header in " << path << " at byte offset " << in.tellg();
    throw std::runtime_error(msg.str());
  }
  return v;
}

}  // namespace detail

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P6") throw std::runtime_error("read_ppm: " + path + " is not a binary PPM (P6)");
  int w = detail::parse_pnm_int(in, path);
  int h = detail::parse_pnm_int(in, path);
  int maxval = detail::parse_pnm_int(in, path);
  if (maxval != 255) throw std::runtime_error("read_ppm: unsupported maxval in " + path);
  in.get();  // single whitespace after maxval
  Image img(w, h);
  std::vector<uint8_t> raw(size_t(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), std::streamsize(raw.size()));
  if (!in) {
    std::ostringstream msg;
    msg << "read_ppm: truncated pixel data in " << path << " at byte offset " << in.tellg();
    throw std::runtime_error(msg.str());
  }
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] / 255.0;
  return img;
}

// 16-bit depth map, big-endian per PGM convention. The fixed scale is
// recorded in the header comment: value = round(depth * 4096), clamped.
constexpr double kDepthScale = 4096.0;

inline void write_pgm16(const std::string& path, const std::vector<double>& depth, int width, int height) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm16: cannot open " + path);
  out << "P5\n# depth = value / " << int(kDepthScale) << " scene units\n" << width << " " << height << "\n65535\n";
  for (double d : depth) {
    auto v = uint16_t(std::clamp(std::lround(d * kDepthScale), 0L, 65535L));
    out.put(char(v >> 8));
    out.put(char(v & 0xff));
  }
  if (!out) throw std::runtime_error("write_pgm16: write failed for " + path);
}

inline std::vector<double> read_pgm16(const std::string& path, int* width = nullptr, int* height = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm16: cannot open " + path);
  std::string magic(2, '\0');
  in.read(magic.data(), 2);
  if (magic != "P5") throw std::runtime_error("read_pgm16: " + path + " is not a binary PGM (P5)");
  int w = detail::parse_pnm_int(in, path);
  int h = detail::parse_pnm_int(in, path);
  int maxval = detail::parse_pnm_int(in, path);
  if (maxval != 65535) throw std::runtime_error("read_pgm16: unsupported maxval in " + path);
  in.get();
  std::vector<double> depth(size_t(w) * h);
  for (auto& d : depth) {
    int hi = in.get(), lo = in.get();
    if (hi < 0 || lo < 0) throw std::runtime_error("read_pgm16: truncated data in " + path);
    d = double((hi << 8) | lo) / kDepthScale;
  }
  if (width) *width = w;
  if (height) *height = h;
  return depth;
}

inline double mse(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height) throw std::invalid_argument("mse: image size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) s += sqr(a.data[i] - b.data[i]);
  return s / double(a.data.size());
}

// 10 log10(1 / mse) for peak-1 images, capped at 99 dB.
inline double psnr(const Image& a, const Image& b) {
  double m = mse(a, b);
  if (m <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / m));
}

inline Image downsample_box(const Image& img, int factor) {
  if (factor < 1 || img.width % factor != 0 || img.height % factor != 0)
    throw std::invalid_argument("downsample_box: size not divisible by factor");
  Image out(img.width / factor, img.height / factor);
  double inv = 1.0 / (factor * factor);
  for (int r = 0; r < out.height; ++r)
    for (int c = 0; c < out.width; ++c) {
      Vec3 acc;
      for (int dr = 0; dr < factor; ++dr)
        for (int dc = 0; dc < factor; ++dc) acc += img.get(r * factor + dr, c * factor + dc);
      out.set(r, c, acc * inv);
    }
  return out;
}

}  // namespace ring
