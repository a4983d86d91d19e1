#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxloc/geometry.hpp"
#include "voxloc/radiance_field.hpp"

namespace voxloc {

/// RGB raster with float channels in [0,1], row-major, top-left origin.
/// Quantization to 8 bits happens only at the PPM file boundary.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;  // 3 * width * height

  static Image black(int w, int h) {
    Image img;
    img.width = w;
    img.height = h;
    img.pixels.assign(static_cast<std::size_t>(3) * w * h, 0.0);
    return img;
  }

  std::size_t offset(int x, int y) const {
    return 3 * (static_cast<std::size_t>(y) * width + x);
  }
  Rgb at(int x, int y) const {
    const std::size_t o = offset(x, y);
    return {pixels[o], pixels[o + 1], pixels[o + 2]};
  }
  void set(int x, int y, const Rgb& c) {
    const std::size_t o = offset(x, y);
    pixels[o] = c.r;
    pixels[o + 1] = c.g;
    pixels[o + 2] = c.b;
  }
};

struct PixelSample {
  PixelCoord coordinate;
  Rgb color;
};

inline void save_ppm(const Image& img, const std::filesystem::path& path) {
  if (img.width < 1 || img.height < 1) throw std::invalid_argument("cannot save empty image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write image: " + path.string());
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> bytes;
  bytes.reserve(img.pixels.size());
  for (double c : img.pixels) {
    const double q = std::round(std::clamp(c, 0.0, 1.0) * 255.0);
    bytes.push_back(static_cast<unsigned char>(q));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("error writing image: " + path.string());
}

namespace detail {

// Reads one whitespace-delimited PPM header token, skipping `#` comments.
inline std::string ppm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

}  // namespace detail

inline Image load_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path.string());
  if (detail::ppm_token(in) != "P6")
    throw std::runtime_error("image " + path.string() + ": expected binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(detail::ppm_token(in));
    h = std::stoi(detail::ppm_token(in));
    maxval = std::stoi(detail::ppm_token(in));
  } catch (const std::exception&) {
    throw std::runtime_error("image " + path.string() + ": malformed PPM header");
  }
  if (w < 1 || h < 1) throw std::runtime_error("image " + path.string() + ": bad dimensions");
  if (maxval != 255)
    throw std::runtime_error("image " + path.string() + ": only maxval 255 is supported");
  Image img = Image::black(w, h);
  std::vector<unsigned char> bytes(img.pixels.size());
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw std::runtime_error("image " + path.string() + ": truncated pixel payload");
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = bytes[i] / 255.0;
  return img;
}

}  // namespace voxloc
